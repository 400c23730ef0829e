//! Feature datasets and classifiers.
//!
//! Random forests and RBF support vector machines are trained per
//! modality (r-PPG HRV block, thermal ROI block) or on the concatenation
//! of both (early fusion). Late fusion stacks a shallow Gini tree on the
//! out-of-fold probabilities of two unimodal models.

mod cv;
mod forest;
mod fusion;
mod svm;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hrv::HrvMetrics;

pub use cv::{cross_validate, default_grid, grid_search_cv, stratified_group_folds, CvOutcome, EvalReport};
pub use forest::{train_rf, RandomForest, RfParams};
pub use fusion::{late_fuse, train_late_fusion, FusionModel, FUSION_MAX_DEPTH};
pub use svm::{train_svm, Standardizer, Svm, SvmParams};
pub use tree::{gini_impurity, DecisionTree, Node, TreeParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlError {
    #[error("session {session_id} lacks the {modality} block")]
    MissingModality { session_id: String, modality: &'static str },
    #[error("training data contains a single class")]
    SingleClass,
    #[error("SMO did not converge within {0} pair updates")]
    NoConvergence(usize),
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("model has no out-of-fold predictions for this dataset")]
    MissingOutOfFold,
    #[error("expected {expected} features, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("non-finite feature value in session {0}")]
    NonFinite(String),
    #[error("empty hyperparameter grid")]
    EmptyGrid,
}

pub(crate) type Result<T> = std::result::Result<T, MlError>;

/// Which feature blocks a dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Rppg,
    Thermal,
    EarlyFusion,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Rppg => "rppg",
            Mode::Thermal => "thermal",
            Mode::EarlyFusion => "early_fusion",
        }
    }
}

/// One labeled example: `label` 0 = baseline, 1 = stimulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub session_id: String,
    pub label: u8,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub mode: Mode,
    pub feature_names: Vec<String>,
    /// Number of leading columns that belong to the r-PPG block.
    pub rppg_width: usize,
    pub vectors: Vec<FeatureVector>,
    /// Ground-truth informative features, for synthetic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub informative: Option<Vec<bool>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.vectors.iter().map(|v| v.values.clone()).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.vectors.iter().map(|v| v.label).collect()
    }

    pub fn groups(&self) -> Vec<String> {
        self.vectors.iter().map(|v| v.session_id.clone()).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.vectors.iter().filter(|v| v.label == 1).count();
        [self.len() - pos, pos]
    }

    /// Projection onto one modality's block.
    pub fn block(&self, mode: Mode) -> Result<Dataset> {
        let cols = match (self.mode, mode) {
            (a, b) if a == b => return Ok(self.clone()),
            (Mode::EarlyFusion, Mode::Rppg) => 0..self.rppg_width,
            (Mode::EarlyFusion, Mode::Thermal) => self.rppg_width..self.width(),
            (_, m) => return Err(MlError::MissingModality { session_id: String::new(), modality: m.as_str() }),
        };
        Ok(Dataset {
            mode,
            feature_names: self.feature_names[cols.clone()].to_vec(),
            rppg_width: if mode == Mode::Rppg { cols.len() } else { 0 },
            vectors: self
                .vectors
                .iter()
                .map(|v| FeatureVector {
                    session_id: v.session_id.clone(),
                    label: v.label,
                    values: v.values[cols.clone()].to_vec(),
                })
                .collect(),
            informative: self.informative.as_ref().map(|m| m[cols].to_vec()),
        })
    }
}

/// Features of one 120-s segment of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFeatures {
    pub label: u8,
    pub hrv: Option<HrvMetrics>,
    /// Per-ROI segment means in the dataset's ROI order.
    pub thermal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFeatures {
    pub session_id: String,
    pub segments: Vec<SegmentFeatures>,
}

pub fn thermal_feature_names(rois: &[i64]) -> Vec<String> {
    rois.iter().map(|id| format!("roi_{id}")).collect()
}

/// One feature vector per (session, segment). Early fusion concatenates the
/// seven HRV features and then one temperature per ROI of `thermal_rois`.
pub fn assemble(sessions: &[SessionFeatures], mode: Mode, thermal_rois: &[i64]) -> Result<Dataset> {
    let want_rppg = matches!(mode, Mode::Rppg | Mode::EarlyFusion);
    let want_thermal = matches!(mode, Mode::Thermal | Mode::EarlyFusion);
    let mut feature_names = Vec::new();
    if want_rppg {
        feature_names.extend(HrvMetrics::NAMES.iter().map(|s| s.to_string()));
    }
    if want_thermal {
        feature_names.extend(thermal_feature_names(thermal_rois));
    }
    let mut vectors = Vec::new();
    for s in sessions {
        for seg in &s.segments {
            let missing = |modality| MlError::MissingModality { session_id: s.session_id.clone(), modality };
            let mut values = Vec::with_capacity(feature_names.len());
            if want_rppg {
                values.extend(seg.hrv.as_ref().ok_or_else(|| missing("rppg"))?.to_array());
            }
            if want_thermal {
                let t = seg.thermal.as_ref().ok_or_else(|| missing("thermal"))?;
                if t.len() != thermal_rois.len() {
                    return Err(MlError::WidthMismatch { expected: thermal_rois.len(), got: t.len() });
                }
                values.extend_from_slice(t);
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(MlError::NonFinite(s.session_id.clone()));
            }
            vectors.push(FeatureVector { session_id: s.session_id.clone(), label: seg.label, values });
        }
    }
    let data = Dataset {
        mode,
        rppg_width: if want_rppg { HrvMetrics::NAMES.len() } else { 0 },
        feature_names,
        vectors,
        informative: None,
    };
    if data.class_counts().contains(&0) {
        return Err(MlError::SingleClass);
    }
    Ok(data)
}

/// Anything that maps a feature vector to P(label = 1).
pub trait Classifier: Send + Sync {
    fn predict_proba(&self, x: &[f64]) -> f64;

    fn predict(&self, x: &[f64]) -> u8 {
        u8::from(self.predict_proba(x) >= 0.5)
    }
}

impl<F> Classifier for F
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn predict_proba(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Rf,
    Svm,
    FusionTree,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rf => "rf",
            ModelKind::Svm => "svm",
            ModelKind::FusionTree => "fusion_tree",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hyperparameters {
    Rf(RfParams),
    Svm(SvmParams),
    FusionTree { max_depth: usize },
}

impl Hyperparameters {
    pub fn kind(&self) -> ModelKind {
        match self {
            Hyperparameters::Rf(_) => ModelKind::Rf,
            Hyperparameters::Svm(_) => ModelKind::Svm,
            Hyperparameters::FusionTree { .. } => ModelKind::FusionTree,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelState {
    Forest(RandomForest),
    Svm(Svm),
    Tree(DecisionTree),
    Fusion(FusionModel),
}

impl ModelState {
    /// Fits the model described by `hp` on raw rows.
    pub fn fit(hp: &Hyperparameters, x: &[Vec<f64>], y: &[u8]) -> Result<ModelState> {
        Ok(match hp {
            Hyperparameters::Rf(p) => ModelState::Forest(RandomForest::fit(x, y, p)?),
            Hyperparameters::Svm(p) => ModelState::Svm(Svm::fit(x, y, p)?),
            Hyperparameters::FusionTree { max_depth } => {
                let params = TreeParams { max_depth: Some(*max_depth), min_leaf: 1, max_features: None };
                let idx: Vec<usize> = (0..x.len()).collect();
                let mut rng = crate::rng::Rng::new(0);
                ModelState::Tree(DecisionTree::fit(x, y, &idx, &params, &mut rng))
            }
        })
    }
}

impl Classifier for ModelState {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        match self {
            ModelState::Forest(m) => m.predict_proba(x),
            ModelState::Svm(m) => m.predict_proba(x),
            ModelState::Tree(m) => m.predict_proba(x),
            ModelState::Fusion(m) => m.predict_proba(x),
        }
    }

    fn predict(&self, x: &[f64]) -> u8 {
        match self {
            ModelState::Svm(m) => m.predict(x),
            other => u8::from(other.predict_proba(x) >= 0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub mode: Mode,
    pub feature_names: Vec<String>,
    pub hyperparameters: Hyperparameters,
    pub state: ModelState,
    /// Out-of-fold P(label = 1) for each training row, from cross-validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oof_proba: Option<Vec<f64>>,
}

impl TrainedModel {
    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.width() {
            return Err(MlError::WidthMismatch { expected: self.width(), got: x.len() });
        }
        Ok(())
    }

    /// Decision values for SVMs; centred probabilities otherwise.
    pub fn decision_function(&self, x: &[f64]) -> f64 {
        match &self.state {
            ModelState::Svm(m) => m.decision(x),
            other => other.predict_proba(x) - 0.5,
        }
    }
}

impl Classifier for TrainedModel {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        self.state.predict_proba(x)
    }

    fn predict(&self, x: &[f64]) -> u8 {
        self.state.predict(x)
    }
}

pub(crate) fn require_both_classes(y: &[u8], per_class: usize) -> Result<()> {
    let pos = y.iter().filter(|&&l| l == 1).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MlError::SingleClass);
    }
    if pos.min(neg) < per_class {
        return Err(MlError::TooFewSamples(format!("need at least {per_class} samples per class, got {neg}/{pos}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(v: f64) -> HrvMetrics {
        HrvMetrics {
            hr_mean: 70.0 + v,
            sdnn: 40.0,
            rmssd: 30.0,
            pnn50: 10.0,
            ln_hf: 5.0,
            ln_lf: 6.0,
            ln_lf_hf: 1.0,
            degenerate: false,
        }
    }

    fn sessions(n: usize, n_roi: usize, thermal: bool) -> Vec<SessionFeatures> {
        (0..n)
            .map(|i| SessionFeatures {
                session_id: format!("s{i}"),
                segments: (0..2)
                    .map(|label| SegmentFeatures {
                        label,
                        hrv: Some(metrics(label as f64)),
                        thermal: thermal.then(|| vec![34.0; n_roi]),
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn assemble_shapes() {
        let rois: Vec<i64> = crate::thermal::selected_roi_ids();
        let d = assemble(&sessions(10, 22, false), Mode::Rppg, &rois).unwrap();
        assert_eq!((d.len(), d.width()), (20, 7));
        let d = assemble(&sessions(3, 22, true), Mode::EarlyFusion, &rois).unwrap();
        assert_eq!(d.width(), 29);
        assert_eq!(d.feature_names[7], "roi_18");
        assert_eq!(d.block(Mode::Thermal).unwrap().width(), 22);
        assert_eq!(d.block(Mode::Rppg).unwrap().width(), 7);
    }

    #[test]
    fn assemble_missing_modality() {
        let rois = crate::thermal::selected_roi_ids();
        let err = assemble(&sessions(2, 22, false), Mode::EarlyFusion, &rois).unwrap_err();
        assert!(matches!(err, MlError::MissingModality { modality: "thermal", .. }));
    }

    #[test]
    fn assemble_single_class() {
        let mut s = sessions(2, 0, false);
        for sess in &mut s {
            sess.segments.retain(|seg| seg.label == 0);
        }
        assert_eq!(assemble(&s, Mode::Rppg, &[]), Err(MlError::SingleClass));
    }
}
