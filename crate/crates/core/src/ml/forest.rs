use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, TreeParams};
use super::{require_both_classes, Classifier, Dataset, Hyperparameters, ModelKind, ModelState, Result, TrainedModel};
use crate::par;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub n_trees: usize,
    /// `None` means unlimited depth.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for RfParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: None, min_leaf: 1, seed: 0 }
    }
}

/// Bagged Gini trees with `√d` features tried per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub n_features: usize,
}

impl RandomForest {
    /// Tree `t` draws its bootstrap sample and feature subsets from
    /// `Rng::derive(seed, t)`, so the forest does not depend on scheduling.
    pub fn fit(x: &[Vec<f64>], y: &[u8], params: &RfParams) -> Result<Self> {
        require_both_classes(y, 1)?;
        let n = x.len();
        let d = x[0].len();
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf.max(1),
            max_features: Some(((d as f64).sqrt().round() as usize).clamp(1, d)),
        };
        let trees = par::map_range(params.n_trees.max(1), |t| {
            let mut rng = Rng::derive(params.seed, t as u64);
            let sample: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
            DecisionTree::fit(x, y, &sample, &tree_params, &mut rng)
        });
        Ok(RandomForest { trees, n_features: d })
    }
}

impl Classifier for RandomForest {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_proba(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Random forest on the whole dataset, without cross-validation.
pub fn train_rf(data: &Dataset, params: &RfParams) -> Result<TrainedModel> {
    require_both_classes(&data.labels(), 2)?;
    let forest = RandomForest::fit(&data.rows(), &data.labels(), params)?;
    Ok(TrainedModel {
        kind: ModelKind::Rf,
        mode: data.mode,
        feature_names: data.feature_names.clone(),
        hyperparameters: Hyperparameters::Rf(params.clone()),
        state: ModelState::Forest(forest),
        oof_proba: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::synth_dataset;

    #[test]
    fn separable_training_accuracy() {
        let data = synth_dataset(40, 10, 6.0, 3).unwrap();
        let m = train_rf(&data, &RfParams { n_trees: 50, ..Default::default() }).unwrap();
        let acc = data.vectors.iter().filter(|v| m.predict(&v.values) == v.label).count();
        assert_eq!(acc, data.len());
    }

    #[test]
    fn single_stump_is_majority() {
        let mut data = synth_dataset(10, 3, 1.0, 3).unwrap();
        let mut zeros = 0;
        data.vectors.retain(|v| {
            zeros += usize::from(v.label == 0);
            v.label == 1 || zeros <= 2
        });
        let p = RfParams { n_trees: 1, max_depth: Some(0), min_leaf: 1, seed: 9 };
        let m = train_rf(&data, &p).unwrap();
        assert!(data.vectors.iter().all(|v| m.predict(&v.values) == 1));
    }

    #[test]
    fn deterministic() {
        let data = synth_dataset(20, 5, 2.0, 4).unwrap();
        let p = RfParams { n_trees: 20, seed: 7, ..Default::default() };
        assert_eq!(train_rf(&data, &p).unwrap(), train_rf(&data, &p).unwrap());
    }
}
