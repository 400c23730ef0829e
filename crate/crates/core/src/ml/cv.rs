use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    require_both_classes, Classifier, Dataset, Hyperparameters, MlError, ModelKind, ModelState, Result, RfParams,
    SvmParams, TrainedModel,
};
use crate::par;
use crate::rng::Rng;

/// Cross-validated performance at the selected grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub model: String,
    pub avg_accuracy: f64,
    pub avg_f1: f64,
    pub fold_accuracy: Vec<f64>,
    pub fold_f1: Vec<f64>,
    pub folds: usize,
    pub hyperparameters: Hyperparameters,
    /// Mean fold accuracy of every grid point, in grid order.
    pub grid_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub fold_accuracy: Vec<f64>,
    pub fold_f1: Vec<f64>,
    /// Held-out P(label = 1) for every row.
    pub oof_proba: Vec<f64>,
}

impl CvOutcome {
    pub fn avg_accuracy(&self) -> f64 {
        self.fold_accuracy.iter().sum::<f64>() / self.fold_accuracy.len() as f64
    }

    pub fn avg_f1(&self) -> f64 {
        self.fold_f1.iter().sum::<f64>() / self.fold_f1.len() as f64
    }
}

/// RF: 2 × 3 × 2 points; SVM: 4 × 3 points with γ scaled by `1/d`.
pub fn default_grid(kind: ModelKind, n_features: usize, seed: u64) -> Vec<Hyperparameters> {
    match kind {
        ModelKind::Rf => {
            let mut grid = Vec::new();
            for n_trees in [100, 300] {
                for max_depth in [Some(3), Some(5), None] {
                    for min_leaf in [1, 3] {
                        grid.push(Hyperparameters::Rf(RfParams { n_trees, max_depth, min_leaf, seed }));
                    }
                }
            }
            grid
        }
        ModelKind::Svm => {
            let d = n_features.max(1) as f64;
            let mut grid = Vec::new();
            for c in [0.1, 1.0, 10.0, 100.0] {
                for g in [0.01, 0.1, 1.0] {
                    grid.push(Hyperparameters::Svm(SvmParams { c, gamma: g / d }));
                }
            }
            grid
        }
        ModelKind::FusionTree => vec![Hyperparameters::FusionTree { max_depth: super::FUSION_MAX_DEPTH }],
    }
}

/// Fold index per row. Rows sharing a group land in the same fold; groups
/// are dealt greedily so each fold gets a similar share of both classes.
pub fn stratified_group_folds(labels: &[u8], groups: &[String], k: usize, seed: u64) -> Result<Vec<usize>> {
    let pos_total = labels.iter().filter(|&&l| l == 1).count();
    let neg_total = labels.len() - pos_total;
    let min_class = pos_total.min(neg_total);
    if k < 2 || k > min_class {
        return Err(MlError::TooFewSamples(format!("{k} folds need 2 <= k <= smallest class count ({min_class})")));
    }
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        by_group.entry(g.as_str()).or_default().push(i);
    }
    if by_group.len() < k {
        return Err(MlError::TooFewSamples(format!("{k} folds need at least {k} groups, got {}", by_group.len())));
    }
    let mut members: Vec<Vec<usize>> = by_group.into_values().collect();
    Rng::new(seed).shuffle(&mut members);
    members.sort_by_key(|m| std::cmp::Reverse(m.len()));

    let mut fold_of = vec![0; labels.len()];
    let mut counts = vec![[0usize; 2]; k];
    let share = |c: [usize; 2]| c[0] as f64 / neg_total.max(1) as f64 + c[1] as f64 / pos_total.max(1) as f64;
    for rows in &members {
        let pos = rows.iter().filter(|&&i| labels[i] == 1).count();
        let add = [rows.len() - pos, pos];
        let f = (0..k)
            .min_by(|&a, &b| {
                let score = |f: usize| {
                    let c = counts[f];
                    // prefer folds still missing a class the group brings
                    let fills = (0..2).filter(|&cl| add[cl] > 0 && c[cl] == 0).count();
                    (std::cmp::Reverse(fills), share([c[0] + add[0], c[1] + add[1]]))
                };
                let (fa, sa) = score(a);
                let (fb, sb) = score(b);
                fa.cmp(&fb).then(sa.total_cmp(&sb)).then(a.cmp(&b))
            })
            .expect("k >= 2");
        counts[f][0] += add[0];
        counts[f][1] += add[1];
        for &i in rows {
            fold_of[i] = f;
        }
    }
    Ok(fold_of)
}

fn f1_positive(truth: &[u8], pred: &[u8]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&t, &p) in truth.iter().zip(pred) {
        match (t, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Fits `hp` on every training split of `fold_of` and scores the held-out
/// fold.
pub fn cross_validate(hp: &Hyperparameters, x: &[Vec<f64>], y: &[u8], fold_of: &[usize]) -> Result<CvOutcome> {
    let k = fold_of.iter().max().map_or(0, |m| m + 1);
    let per_fold = par::map_range(k, |f| -> Result<(Vec<usize>, Vec<f64>, Vec<u8>)> {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..x.len()).partition(|&i| fold_of[i] != f);
        let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let ty: Vec<u8> = train.iter().map(|&i| y[i]).collect();
        let model = ModelState::fit(hp, &tx, &ty)?;
        let proba = test.iter().map(|&i| model.predict_proba(&x[i])).collect();
        let pred = test.iter().map(|&i| model.predict(&x[i])).collect();
        Ok((test, proba, pred))
    });
    let mut out = CvOutcome { fold_accuracy: Vec::new(), fold_f1: Vec::new(), oof_proba: vec![f64::NAN; x.len()] };
    for fold in per_fold {
        let (test, proba, pred) = fold?;
        let truth: Vec<u8> = test.iter().map(|&i| y[i]).collect();
        let correct = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
        out.fold_accuracy.push(correct as f64 / test.len().max(1) as f64);
        out.fold_f1.push(f1_positive(&truth, &pred));
        for (&i, p) in test.iter().zip(proba) {
            out.oof_proba[i] = p;
        }
    }
    Ok(out)
}

pub(crate) fn report(
    mode: &str,
    model: &str,
    hp: &Hyperparameters,
    cv: &CvOutcome,
    grid_accuracy: Vec<f64>,
) -> EvalReport {
    EvalReport {
        mode: mode.to_string(),
        model: model.to_string(),
        avg_accuracy: cv.avg_accuracy(),
        avg_f1: cv.avg_f1(),
        fold_accuracy: cv.fold_accuracy.clone(),
        fold_f1: cv.fold_f1.clone(),
        folds: cv.fold_accuracy.len(),
        hyperparameters: hp.clone(),
        grid_accuracy,
    }
}

/// Session-grouped stratified k-fold grid search. The grid point with the
/// best mean fold accuracy wins (first on ties) and is refit on all rows.
pub fn grid_search_cv(
    data: &Dataset,
    grid: &[Hyperparameters],
    k: usize,
    seed: u64,
) -> Result<(EvalReport, TrainedModel)> {
    if grid.is_empty() {
        return Err(MlError::EmptyGrid);
    }
    let x = data.rows();
    let y = data.labels();
    require_both_classes(&y, 2)?;
    let fold_of = stratified_group_folds(&y, &data.groups(), k, seed)?;
    let outcomes = par::map_slice(grid, |hp| cross_validate(hp, &x, &y, &fold_of));
    let outcomes: Vec<CvOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    let grid_accuracy: Vec<f64> = outcomes.iter().map(CvOutcome::avg_accuracy).collect();
    let mut best = 0;
    for (i, acc) in grid_accuracy.iter().enumerate() {
        if *acc > grid_accuracy[best] {
            best = i;
        }
    }
    let hp = &grid[best];
    log::debug!(
        "grid search {} {}: best point {best} acc {:.3}",
        data.mode.as_str(),
        hp.kind().as_str(),
        grid_accuracy[best]
    );
    let state = ModelState::fit(hp, &x, &y)?;
    let rep = report(data.mode.as_str(), hp.kind().as_str(), hp, &outcomes[best], grid_accuracy);
    let model = TrainedModel {
        kind: hp.kind(),
        mode: data.mode,
        feature_names: data.feature_names.clone(),
        hyperparameters: hp.clone(),
        state,
        oof_proba: Some(outcomes[best].oof_proba.clone()),
    };
    Ok((rep, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::synth_dataset;

    #[test]
    fn folds_keep_groups_and_classes() {
        let data = synth_dataset(23, 3, 1.0, 5).unwrap();
        let folds = stratified_group_folds(&data.labels(), &data.groups(), 5, 1).unwrap();
        let mut per = vec![[0; 2]; 5];
        for (v, &f) in data.vectors.iter().zip(&folds) {
            per[f][v.label as usize] += 1;
        }
        assert!(per.iter().all(|c| c[0] >= 4 && c[1] >= 4), "{per:?}");
        for pair in folds.chunks(2) {
            assert_eq!(pair[0], pair[1]);
        }
    }

    #[test]
    fn too_many_folds() {
        let data = synth_dataset(3, 3, 1.0, 5).unwrap();
        assert!(matches!(stratified_group_folds(&data.labels(), &data.groups(), 5, 1), Err(MlError::TooFewSamples(_))));
    }

    #[test]
    fn separable_is_perfect() {
        let data = synth_dataset(25, 4, 12.0, 2).unwrap();
        let grid = vec![Hyperparameters::Svm(SvmParams { c: 1.0, gamma: 0.25 })];
        let (rep, _) = grid_search_cv(&data, &grid, 5, 0).unwrap();
        assert_eq!((rep.avg_accuracy, rep.avg_f1), (1.0, 1.0));
    }

    #[test]
    fn single_point_grid_matches_direct_cv() {
        let data = synth_dataset(20, 4, 2.0, 8).unwrap();
        let hp = Hyperparameters::Rf(RfParams { n_trees: 20, max_depth: Some(3), min_leaf: 1, seed: 1 });
        let (rep, model) = grid_search_cv(&data, std::slice::from_ref(&hp), 4, 3).unwrap();
        let folds = stratified_group_folds(&data.labels(), &data.groups(), 4, 3).unwrap();
        let cv = cross_validate(&hp, &data.rows(), &data.labels(), &folds).unwrap();
        assert_eq!(rep.fold_accuracy, cv.fold_accuracy);
        assert_eq!(model.oof_proba.unwrap(), cv.oof_proba);
        let mean = rep.fold_accuracy.iter().sum::<f64>() / rep.fold_accuracy.len() as f64;
        assert_eq!(rep.avg_accuracy, mean);
    }
}
