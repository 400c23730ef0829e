use serde::{Deserialize, Serialize};

use super::cv::{cross_validate, default_grid, grid_search_cv, report, stratified_group_folds, EvalReport};
use super::tree::DecisionTree;
use super::{Classifier, Dataset, Hyperparameters, MlError, Mode, ModelKind, ModelState, Result, TrainedModel};

pub const FUSION_MAX_DEPTH: usize = 3;

/// Gini tree over the two unimodal probabilities `(p_rppg, p_thermal)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub tree: DecisionTree,
    pub rppg: Box<TrainedModel>,
    pub thermal: Box<TrainedModel>,
    /// Leading columns of the paired vector that feed `rppg`.
    pub rppg_width: usize,
}

impl FusionModel {
    pub fn inputs(&self, x: &[f64]) -> [f64; 2] {
        let (r, t) = x.split_at(self.rppg_width);
        [self.rppg.predict_proba(r), self.thermal.predict_proba(t)]
    }
}

impl Classifier for FusionModel {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        self.tree.predict_proba(&self.inputs(x))
    }
}

/// Stacks a depth-limited Gini tree on the out-of-fold probabilities of
/// two unimodal models and scores it with the same grouped CV protocol.
pub fn late_fuse(
    rppg_model: &TrainedModel,
    thermal_model: &TrainedModel,
    data: &Dataset,
    k: usize,
    seed: u64,
) -> Result<(TrainedModel, EvalReport)> {
    let n = data.len();
    let oof = |m: &TrainedModel| match &m.oof_proba {
        Some(p) if p.len() == n && p.iter().all(|v| v.is_finite()) => Ok(p.clone()),
        _ => Err(MlError::MissingOutOfFold),
    };
    let pr = oof(rppg_model)?;
    let pt = oof(thermal_model)?;
    let x2: Vec<Vec<f64>> = pr.iter().zip(&pt).map(|(a, b)| vec![*a, *b]).collect();
    let y = data.labels();
    let hp = Hyperparameters::FusionTree { max_depth: FUSION_MAX_DEPTH };
    let fold_of = stratified_group_folds(&y, &data.groups(), k, seed)?;
    let cv = cross_validate(&hp, &x2, &y, &fold_of)?;
    let ModelState::Tree(tree) = ModelState::fit(&hp, &x2, &y)? else {
        unreachable!("fusion hyperparameters fit a tree")
    };
    let rep = report("late_fusion", rppg_model.kind.as_str(), &hp, &cv, vec![cv.avg_accuracy()]);
    let mut names = rppg_model.feature_names.clone();
    names.extend(thermal_model.feature_names.iter().cloned());
    let model = TrainedModel {
        kind: ModelKind::FusionTree,
        mode: Mode::EarlyFusion,
        feature_names: names,
        hyperparameters: hp,
        state: ModelState::Fusion(FusionModel {
            tree,
            rppg: Box::new(rppg_model.clone()),
            thermal: Box::new(thermal_model.clone()),
            rppg_width: rppg_model.width(),
        }),
        oof_proba: Some(cv.oof_proba),
    };
    Ok((model, rep))
}

/// Grid-searches `kind` on each modality block of a paired dataset, then
/// fuses the two. Returns the fused model, its report, and the unimodal
/// reports (r-PPG, thermal).
pub fn train_late_fusion(
    data: &Dataset,
    kind: ModelKind,
    k: usize,
    seed: u64,
) -> Result<(TrainedModel, EvalReport, [EvalReport; 2])> {
    let mut unimodal = Vec::with_capacity(2);
    for mode in [Mode::Rppg, Mode::Thermal] {
        let block = data.block(mode)?;
        let grid = default_grid(kind, block.width(), seed);
        unimodal.push(grid_search_cv(&block, &grid, k, seed)?);
    }
    let (thermal_rep, thermal_model) = unimodal.pop().expect("two blocks");
    let (rppg_rep, rppg_model) = unimodal.pop().expect("two blocks");
    let (model, rep) = late_fuse(&rppg_model, &thermal_model, data, k, seed)?;
    Ok((model, rep, [rppg_rep, thermal_rep]))
}
