//! End-to-end session processing and report assembly.
//!
//! Sessions are processed independently (and concurrently); everything
//! after that runs on the session list sorted by id, so the report is a
//! pure function of the inputs, the config and the seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::{background_sample, rank_features, shapley_mc, AttributionError};
use crate::dataio::{self, ConditionLabel, SessionManifest};
use crate::ecgref::{self, AgreementPair, AgreementRow, AGREEMENT_METRICS};
use crate::hrv::{self, HrvLimits, HrvMetrics, Segment};
use crate::ml::{
    self, assemble, default_grid, grid_search_cv, EvalReport, MlError, Mode, ModelKind, SegmentFeatures,
    SessionFeatures, TrainedModel,
};
use crate::rppg::{self, HrEstimator};
use crate::stats::{self, TestResult};
use crate::thermal::{self, ThermalFeatures};
use crate::{par, Error};

pub const SEGMENT_NAMES: [&str; 2] = ["first120", "last120"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub window_s: f64,
    pub hop_s: f64,
    pub jump_bpm: f64,
    /// Sessions whose MAE/HR exceeds this are excluded.
    pub quality_threshold: f64,
    pub segment_s: f64,
    pub forehead_roi: i64,
    pub cv_folds: usize,
    pub seed: u64,
    pub min_peak_ratio: f64,
    pub hrv_limits: HrvLimits,
    pub agreement_thresholds: Vec<f64>,
    /// Correlate per-session deltas instead of raw segment metrics.
    pub agreement_delta: bool,
    /// Sessions left out of the agreement table.
    pub agreement_exclude: Vec<String>,
    /// Welch unpaired tests instead of paired tests for last vs first.
    pub unpaired: bool,
    pub shap_permutations: usize,
    pub models: Vec<ModelKind>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_s: 6.0,
            hop_s: 1.0,
            jump_bpm: rppg::DEFAULT_JUMP_BPM,
            quality_threshold: 0.42,
            segment_s: hrv::SEGMENT_S,
            forehead_roi: thermal::FOREHEAD_ROI,
            cv_folds: 5,
            seed: 0,
            min_peak_ratio: rppg::DEFAULT_MIN_PEAK_RATIO,
            hrv_limits: HrvLimits::default(),
            agreement_thresholds: threshold_range(0.30, 0.48, 0.02),
            agreement_delta: false,
            agreement_exclude: Vec::new(),
            unpaired: false,
            shap_permutations: 500,
            models: vec![ModelKind::Rf, ModelKind::Svm],
        }
    }
}

/// `lo, lo + step, …` up to and including `hi`, rounded to 1e-9.
pub fn threshold_range(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || hi < lo {
        return vec![];
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9).collect()
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("window_s", self.window_s),
            ("hop_s", self.hop_s),
            ("jump_bpm", self.jump_bpm),
            ("segment_s", self.segment_s),
            ("min_peak_ratio", self.min_peak_ratio),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(format!("{name} must be positive, got {v}"));
        }
        if !(0.0..=1.0).contains(&self.quality_threshold) {
            return Err(format!("quality_threshold must lie in [0, 1], got {}", self.quality_threshold));
        }
        if self.cv_folds < 2 {
            return Err("cv_folds must be at least 2".into());
        }
        if self.models.contains(&ModelKind::FusionTree) {
            return Err("models may only list rf and svm".into());
        }
        Ok(())
    }
}

/// A failure tagged with where it happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub stage: String,
    /// Innermost error variant name, e.g. `TooFewSamples`.
    pub kind: String,
    pub message: String,
}

impl StageError {
    fn new<E: std::fmt::Display + std::fmt::Debug>(session_id: Option<&str>, stage: &str, err: E) -> Self {
        Self {
            session_id: session_id.map(str::to_owned),
            stage: stage.to_owned(),
            kind: variant_name(&format!("{err:?}")),
            message: err.to_string(),
        }
    }
}

/// `Rppg(NoPulse)` -> `NoPulse`; `TooFewSamples("..")` -> `TooFewSamples`.
fn variant_name(debug: &str) -> String {
    let mut rest = debug;
    loop {
        let end = rest.find(|c: char| !c.is_alphanumeric() && c != '_').unwrap_or(rest.len());
        let (name, tail) = rest.split_at(end);
        match tail.strip_prefix('(') {
            Some(inner) if inner.starts_with(|c: char| c.is_ascii_uppercase()) => rest = inner,
            _ => return name.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentThermal {
    /// Per-ROI segment means in table order.
    pub first120: Vec<f64>,
    pub last120: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub condition_label: ConditionLabel,
    pub quality: Option<f64>,
    pub excluded: bool,
    /// r-PPG HRV keyed by segment name.
    pub hrv: BTreeMap<String, HrvMetrics>,
    /// Reference-ECG HRV keyed by segment name.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub ecg_hrv: BTreeMap<String, HrvMetrics>,
    pub thermal: Option<ThermalFeatures>,
    pub thermal_segments: Option<SegmentThermal>,
    pub errors: Vec<StageError>,
}

impl SessionSummary {
    /// Loading or processing failed before anything usable came out.
    pub fn failed(&self) -> bool {
        self.quality.is_none() && self.thermal.is_none()
    }

    fn usable(&self) -> bool {
        !self.excluded && !self.failed()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTest {
    pub feature: String,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub df: Option<f64>,
    pub n: usize,
}

/// Pearson correlations between HRV deltas (rows) and ROI temperature
/// deltas (columns) across sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub hrv: Vec<String>,
    pub rois: Vec<i64>,
    pub r: Vec<Vec<Option<f64>>>,
    pub p: Vec<Vec<Option<f64>>>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_phi: f64,
    pub top10: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub sessions: Vec<SessionSummary>,
    pub excluded: Vec<String>,
    pub agreement: Vec<AgreementRow>,
    pub models: Vec<EvalReport>,
    pub ttests: Vec<FeatureTest>,
    pub correlation: Option<CorrelationMatrix>,
    pub attribution: Vec<FeatureImportance>,
    pub errors: Vec<StageError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Success,
    /// Some sessions failed.
    Partial,
    NoUsableSessions,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Success => 0,
            RunStatus::Partial => 2,
            RunStatus::NoUsableSessions => 3,
        }
    }
}

impl PipelineReport {
    pub fn status(&self) -> RunStatus {
        if !self.sessions.iter().any(SessionSummary::usable) {
            RunStatus::NoUsableSessions
        } else if self.sessions.iter().any(SessionSummary::failed) {
            RunStatus::Partial
        } else {
            RunStatus::Success
        }
    }
}

fn segments(duration_s: f64, segment_s: f64) -> [Segment; 2] {
    [Segment::first(segment_s), Segment::last(duration_s, segment_s)]
}

fn process_session(m: &SessionManifest, cfg: &PipelineConfig) -> SessionSummary {
    let id = m.session_id.as_str();
    let mut s = SessionSummary {
        session_id: m.session_id.clone(),
        condition_label: m.condition_label,
        quality: None,
        excluded: false,
        hrv: BTreeMap::new(),
        ecg_hrv: BTreeMap::new(),
        thermal: None,
        thermal_segments: None,
        errors: Vec::new(),
    };

    let rppg_part = || -> Result<(rppg::HrSeries, f64), Error> {
        let rgb = dataio::load_rgb_traces(&m.rgb_path)?;
        let bvp = rppg::pos_bvp(&rgb)?;
        let est = HrEstimator { window_s: cfg.window_s, hop_s: cfg.hop_s, min_peak_ratio: cfg.min_peak_ratio };
        let hr = rppg::clean_hr(&rppg::estimate_hr_with(&bvp, &est)?, cfg.jump_bpm)?;
        let q = rppg::quality_index(&hr)?;
        Ok((hr, q.mae_over_hr))
    };
    match rppg_part() {
        Ok((hr, q)) => {
            s.quality = Some(q);
            s.excluded = !(q <= cfg.quality_threshold);
            for (name, seg) in SEGMENT_NAMES.iter().zip(segments(hr.duration_s, cfg.segment_s)) {
                match hrv::segment_metrics_with(&hr, seg, &cfg.hrv_limits) {
                    Ok(metrics) => {
                        s.hrv.insert(name.to_string(), metrics);
                    }
                    Err(e) => s.errors.push(StageError::new(Some(id), &format!("hrv.{name}"), e)),
                }
            }
        }
        Err(e) => s.errors.push(StageError::new(Some(id), "rppg", e)),
    }

    let thermal_part = || -> Result<(ThermalFeatures, SegmentThermal), Error> {
        let traces = dataio::load_thermal_traces(&m.thermal_path)?;
        let features = thermal::thermal_features(&traces, cfg.forehead_roi)?;
        let order = thermal::selected_roi_ids();
        let [a, b] = segments(traces.duration_s(), cfg.segment_s);
        let seg = SegmentThermal {
            first120: thermal::feature_block(&traces, a, &order)?,
            last120: thermal::feature_block(&traces, b, &order)?,
        };
        Ok((features, seg))
    };
    match thermal_part() {
        Ok((f, seg)) => {
            s.thermal = Some(f);
            s.thermal_segments = Some(seg);
        }
        Err(e) => s.errors.push(StageError::new(Some(id), "thermal", e)),
    }

    if let Some(path) = &m.ecg_path {
        let ecg_part = || -> Result<(hrv::NnSeries, f64), Error> {
            let ecg = dataio::load_ecg(path)?;
            Ok((ecgref::detect_r_peaks(&ecg)?, ecg.t0 + ecg.duration_s()))
        };
        match ecg_part() {
            Ok((nn, duration)) => {
                for (name, seg) in SEGMENT_NAMES.iter().zip(segments(duration, cfg.segment_s)) {
                    match hrv::nn_segment_metrics(&nn, seg) {
                        Ok(metrics) => {
                            s.ecg_hrv.insert(name.to_string(), metrics);
                        }
                        Err(e) => s.errors.push(StageError::new(Some(id), &format!("ecg.{name}"), e)),
                    }
                }
            }
            Err(e) => s.errors.push(StageError::new(Some(id), "ecg", e)),
        }
    }
    s
}

/// Loads every manifest, keeping load failures as errors.
pub fn load_manifests(paths: &[impl AsRef<Path>]) -> (Vec<SessionManifest>, Vec<StageError>) {
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for p in paths {
        match dataio::load_manifest(p) {
            Ok(m) => ok.push(m),
            Err(e) => errors.push(StageError::new(None, "manifest", e)),
        }
    }
    (ok, errors)
}

fn segment_label(seg: usize, condition: ConditionLabel) -> u8 {
    u8::from(seg == 1 && condition == ConditionLabel::Stimulated)
}

fn session_features(sessions: &[&SessionSummary], mode: Mode) -> Vec<SessionFeatures> {
    sessions
        .iter()
        .filter(|s| match mode {
            Mode::Rppg => s.hrv.len() == 2,
            Mode::Thermal => s.thermal_segments.is_some(),
            Mode::EarlyFusion => s.hrv.len() == 2 && s.thermal_segments.is_some(),
        })
        .map(|s| SessionFeatures {
            session_id: s.session_id.clone(),
            segments: SEGMENT_NAMES
                .iter()
                .enumerate()
                .map(|(i, name)| SegmentFeatures {
                    label: segment_label(i, s.condition_label),
                    hrv: s.hrv.get(*name).copied(),
                    thermal: s.thermal_segments.as_ref().map(|t| {
                        if i == 0 {
                            t.first120.clone()
                        } else {
                            t.last120.clone()
                        }
                    }),
                })
                .collect(),
        })
        .collect()
}

fn dataset_for(sessions: &[&SessionSummary], mode: Mode) -> Result<ml::Dataset, MlError> {
    let feats = session_features(sessions, mode);
    if feats.len() < 2 {
        return Err(MlError::TooFewSamples(format!(
            "{} mode needs at least 2 usable sessions, got {}",
            mode.as_str(),
            feats.len()
        )));
    }
    assemble(&feats, mode, &thermal::selected_roi_ids())
}

/// Folds actually used: the requested count clamped to the data.
pub fn effective_folds(data: &ml::Dataset, requested: usize) -> usize {
    let [neg, pos] = data.class_counts();
    let groups: std::collections::BTreeSet<&str> = data.vectors.iter().map(|v| v.session_id.as_str()).collect();
    requested.min(neg).min(pos).min(groups.len()).max(2)
}

/// Monte-Carlo Shapley values for every row of `data`, ranked by mean
/// `|φ|`. Row `i` uses seed `seed + i`.
pub fn feature_importance(
    model: &TrainedModel,
    data: &ml::Dataset,
    permutations: usize,
    seed: u64,
) -> Result<Vec<FeatureImportance>, AttributionError> {
    let rows = data.rows();
    let background = background_sample(&rows, seed);
    let reports = rows
        .iter()
        .enumerate()
        .map(|(i, x)| shapley_mc(model, x, &background, permutations.max(100), seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rank_features(&reports)?
        .iter()
        .enumerate()
        .map(|(pos, f)| FeatureImportance {
            feature: data.feature_names[f.index].clone(),
            mean_abs_phi: f.mean_abs_phi,
            top10: pos < 10,
        })
        .collect())
}

struct MlOutputs {
    models: Vec<EvalReport>,
    attribution: Vec<FeatureImportance>,
    errors: Vec<StageError>,
}

fn run_ml(usable: &[&SessionSummary], cfg: &PipelineConfig) -> MlOutputs {
    let mut out = MlOutputs { models: Vec::new(), attribution: Vec::new(), errors: Vec::new() };
    let mut errors = Vec::new();
    let mut early_rf = None;
    for &kind in &cfg.models {
        for mode in [Mode::Rppg, Mode::Thermal, Mode::EarlyFusion] {
            let stage = format!("ml.{}.{}", mode.as_str(), kind.as_str());
            let result = dataset_for(usable, mode).and_then(|data| {
                let k = effective_folds(&data, cfg.cv_folds);
                let grid = default_grid(kind, data.width(), cfg.seed);
                grid_search_cv(&data, &grid, k, cfg.seed).map(|r| (data, r))
            });
            match result {
                Ok((data, (rep, model))) => {
                    if mode == Mode::EarlyFusion && (kind == ModelKind::Rf || early_rf.is_none()) {
                        early_rf = Some((data, model));
                    }
                    out.models.push(rep);
                }
                Err(e) => errors.push(StageError::new(None, &stage, e)),
            }
        }
        let stage = format!("ml.late_fusion.{}", kind.as_str());
        let result = dataset_for(usable, Mode::EarlyFusion).and_then(|data| {
            let k = effective_folds(&data, cfg.cv_folds);
            ml::train_late_fusion(&data, kind, k, cfg.seed)
        });
        match result {
            Ok((_, rep, _)) => out.models.push(rep),
            Err(e) => errors.push(StageError::new(None, &stage, e)),
        }
    }

    if let Some((data, model)) = early_rf {
        match feature_importance(&model, &data, cfg.shap_permutations, cfg.seed) {
            Ok(ranked) => out.attribution = ranked,
            Err(e) => errors.push(StageError::new(None, "attribution", e)),
        }
    }
    out.errors = errors;
    out
}

fn test_pair(a: &[f64], b: &[f64], unpaired: bool) -> Result<TestResult, stats::StatsError> {
    if unpaired {
        stats::welch_ttest(b, a)
    } else {
        stats::paired_ttest(b, a)
    }
}

fn feature_test(feature: String, first: &[f64], last: &[f64], unpaired: bool) -> FeatureTest {
    match test_pair(first, last, unpaired) {
        Ok(t) => {
            FeatureTest { feature, statistic: Some(t.statistic), p_value: Some(t.p_value), df: Some(t.df), n: t.n }
        }
        Err(_) => FeatureTest { feature, statistic: None, p_value: None, df: None, n: first.len() },
    }
}

/// Last-vs-first tests for every HRV metric and every ROI's segment mean.
fn segment_tests(usable: &[&SessionSummary], unpaired: bool) -> Vec<FeatureTest> {
    let mut tests = Vec::new();
    let with_hrv: Vec<_> = usable.iter().filter(|s| s.hrv.len() == 2).collect();
    for (k, name) in HrvMetrics::NAMES.iter().enumerate() {
        let first: Vec<f64> = with_hrv.iter().map(|s| s.hrv["first120"].to_array()[k]).collect();
        let last: Vec<f64> = with_hrv.iter().map(|s| s.hrv["last120"].to_array()[k]).collect();
        tests.push(feature_test(name.to_string(), &first, &last, unpaired));
    }
    let with_thermal: Vec<&SegmentThermal> = usable.iter().filter_map(|s| s.thermal_segments.as_ref()).collect();
    for (k, id) in thermal::selected_roi_ids().iter().enumerate() {
        let first: Vec<f64> = with_thermal.iter().map(|t| t.first120[k]).collect();
        let last: Vec<f64> = with_thermal.iter().map(|t| t.last120[k]).collect();
        tests.push(feature_test(format!("roi_{id}"), &first, &last, unpaired));
    }
    tests
}

fn correlation_matrix(usable: &[&SessionSummary]) -> Option<CorrelationMatrix> {
    let rois = thermal::selected_roi_ids();
    let both: Vec<_> = usable
        .iter()
        .filter(|s| {
            s.hrv.len() == 2 && s.thermal.as_ref().is_some_and(|t| rois.iter().all(|id| t.delta.contains_key(id)))
        })
        .collect();
    if both.is_empty() {
        return None;
    }
    let mut r = Vec::new();
    let mut p = Vec::new();
    for k in 0..HrvMetrics::NAMES.len() {
        let hrv_delta: Vec<f64> =
            both.iter().map(|s| s.hrv["last120"].to_array()[k] - s.hrv["first120"].to_array()[k]).collect();
        let (mut r_row, mut p_row) = (Vec::new(), Vec::new());
        for id in &rois {
            let t: Vec<f64> = both.iter().map(|s| s.thermal.as_ref().expect("filtered").delta[id]).collect();
            match stats::pearson(&hrv_delta, &t) {
                Ok(res) => {
                    r_row.push(Some(res.statistic));
                    p_row.push(Some(res.p_value));
                }
                Err(_) => {
                    r_row.push(None);
                    p_row.push(None);
                }
            }
        }
        r.push(r_row);
        p.push(p_row);
    }
    Some(CorrelationMatrix {
        hrv: HrvMetrics::NAMES.iter().map(|s| s.to_string()).collect(),
        rois,
        r,
        p,
        n: both.len(),
    })
}

fn agreement_pairs(sessions: &[SessionSummary], cfg: &PipelineConfig) -> Vec<AgreementPair> {
    let mut pairs = Vec::new();
    for s in sessions {
        if cfg.agreement_exclude.contains(&s.session_id) {
            continue;
        }
        let Some(q) = s.quality else { continue };
        for name in SEGMENT_NAMES {
            if let (Some(r), Some(e)) = (s.hrv.get(name), s.ecg_hrv.get(name)) {
                pairs.push(AgreementPair {
                    session_id: s.session_id.clone(),
                    segment: Some(name.to_string()),
                    quality: q,
                    rppg: *r,
                    ecg: *e,
                });
            }
        }
    }
    if cfg.agreement_delta {
        ecgref::session_deltas(&pairs)
    } else {
        pairs
    }
}

/// Runs every stage over `manifests`. Per-session failures are recorded in
/// the report and never abort the run.
pub fn run_pipeline(manifests: &[SessionManifest], cfg: &PipelineConfig) -> PipelineReport {
    let mut sessions = par::map_slice(manifests, |m| process_session(m, cfg));
    sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    let mut errors: Vec<StageError> = sessions.iter().flat_map(|s| s.errors.clone()).collect();
    let excluded: Vec<String> = sessions.iter().filter(|s| s.excluded).map(|s| s.session_id.clone()).collect();
    for id in &excluded {
        log::info!("session {id} excluded by quality gate");
    }

    let pairs = agreement_pairs(&sessions, cfg);
    let mut agreement = Vec::new();
    if !pairs.is_empty() {
        for &t in &cfg.agreement_thresholds {
            match ecgref::agreement_at(&pairs, t) {
                Ok(row) => agreement.push(row),
                Err(e) => errors.push(StageError::new(None, "agreement", e)),
            }
        }
    }

    let usable: Vec<&SessionSummary> = sessions.iter().filter(|s| s.usable()).collect();
    let ml_out = run_ml(&usable, cfg);
    errors.extend(ml_out.errors);
    let ttests = segment_tests(&usable, cfg.unpaired);
    let correlation = correlation_matrix(&usable);

    PipelineReport {
        config: cfg.clone(),
        excluded,
        agreement,
        models: ml_out.models,
        ttests,
        correlation,
        attribution: ml_out.attribution,
        errors,
        sessions,
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn quality_csv(r: &PipelineReport) -> String {
    let mut s = String::from("session_id,mae_over_hr,excluded\n");
    for x in &r.sessions {
        let _ = writeln!(s, "{},{},{}", x.session_id, opt(x.quality), x.excluded);
    }
    s
}

pub fn hrv_csv(r: &PipelineReport) -> String {
    let mut s = format!("session_id,source,segment,{}\n", HrvMetrics::NAMES.join(","));
    for x in &r.sessions {
        for (source, map) in [("rppg", &x.hrv), ("ecg", &x.ecg_hrv)] {
            for (seg, m) in map {
                let vals: Vec<String> = m.to_array().iter().map(|v| num(*v)).collect();
                let _ = writeln!(s, "{},{source},{seg},{}", x.session_id, vals.join(","));
            }
        }
    }
    s
}

pub fn thermal_csv(r: &PipelineReport) -> String {
    let rois = thermal::selected_roi_ids();
    let mut s = String::from("session_id,kind");
    for id in &rois {
        let _ = write!(s, ",roi_{id}");
    }
    s.push('\n');
    for x in &r.sessions {
        let Some(t) = &x.thermal else { continue };
        for (kind, map) in [("delta", &t.delta), ("rel_forehead", &t.forehead_relative)] {
            let vals: Vec<String> = rois.iter().map(|id| opt(map.get(id).copied())).collect();
            let _ = writeln!(s, "{},{kind},{}", x.session_id, vals.join(","));
        }
    }
    s
}

pub fn models_csv(r: &PipelineReport) -> String {
    let mut s = String::from("mode,model,avg_accuracy,avg_f1,folds\n");
    for m in &r.models {
        let _ = writeln!(s, "{},{},{},{},{}", m.mode, m.model, num(m.avg_accuracy), num(m.avg_f1), m.folds);
    }
    s
}

pub fn ttests_csv(r: &PipelineReport) -> String {
    let mut s = String::from("feature,t,p,df,n\n");
    for t in &r.ttests {
        let _ = writeln!(s, "{},{},{},{},{}", t.feature, opt(t.statistic), opt(t.p_value), opt(t.df), t.n);
    }
    s
}

pub fn correlation_csv(m: &CorrelationMatrix, values: &[Vec<Option<f64>>]) -> String {
    let mut s = String::from("hrv");
    for id in &m.rois {
        let _ = write!(s, ",roi_{id}");
    }
    s.push('\n');
    for (name, row) in m.hrv.iter().zip(values) {
        let cells: Vec<String> = row.iter().map(|v| opt(*v)).collect();
        let _ = writeln!(s, "{name},{}", cells.join(","));
    }
    s
}

pub fn agreement_csv(rows: &[AgreementRow]) -> String {
    let mut s = String::from("threshold");
    for m in AGREEMENT_METRICS {
        let _ = write!(s, ",r_{m}");
    }
    for m in AGREEMENT_METRICS {
        let _ = write!(s, ",p_{m}");
    }
    s.push_str(",n\n");
    for row in rows {
        let _ = write!(s, "{}", num(row.threshold));
        for m in AGREEMENT_METRICS {
            let _ = write!(s, ",{}", opt(row.get(m).map(|c| c.r)));
        }
        for m in AGREEMENT_METRICS {
            let _ = write!(s, ",{}", opt(row.get(m).map(|c| c.p)));
        }
        let _ = writeln!(s, ",{}", row.n);
    }
    s
}

pub fn attribution_csv(r: &PipelineReport) -> String {
    let mut s = String::from("rank,feature,mean_abs_phi,top10\n");
    for (i, f) in r.attribution.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{}", i + 1, f.feature, num(f.mean_abs_phi), f.top10);
    }
    s
}

pub fn errors_csv(r: &PipelineReport) -> String {
    let mut s = String::from("session_id,stage,kind,message\n");
    for e in &r.errors {
        let msg = e.message.replace('"', "'");
        let _ = writeln!(s, "{},{},{},\"{msg}\"", e.session_id.as_deref().unwrap_or(""), e.stage, e.kind);
    }
    s
}

/// Writes `report.json` and the CSV tables into `dir`.
pub fn write_report(report: &PipelineReport, dir: &Path) -> std::io::Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<(String, String)> = vec![
        ("report.json".into(), serde_json::to_string_pretty(report).expect("serializable") + "\n"),
        ("quality.csv".into(), quality_csv(report)),
        ("hrv.csv".into(), hrv_csv(report)),
        ("thermal.csv".into(), thermal_csv(report)),
        ("models.csv".into(), models_csv(report)),
        ("ttests.csv".into(), ttests_csv(report)),
        ("agreement.csv".into(), agreement_csv(&report.agreement)),
        ("attribution.csv".into(), attribution_csv(report)),
        ("errors.csv".into(), errors_csv(report)),
    ];
    if let Some(m) = &report.correlation {
        files.push(("correlation_r.csv".into(), correlation_csv(m, &m.r)));
        files.push(("correlation_p.csv".into(), correlation_csv(m, &m.p)));
    }
    for (name, body) in &files {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(files.into_iter().map(|(n, _)| n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds() {
        assert_eq!(variant_name("Rppg(NoPulse)"), "NoPulse");
        assert_eq!(variant_name("Ml(TooFewSamples(\"x (y)\"))"), "TooFewSamples");
        assert_eq!(variant_name("Data(Io { path: \"a\" })"), "Io");
        assert_eq!(variant_name("NoConvergence(10)"), "NoConvergence");
    }

    #[test]
    fn thresholds() {
        let t = threshold_range(0.30, 0.48, 0.02);
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.3);
        assert_eq!(*t.last().unwrap(), 0.48);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = PipelineConfig::default();
        assert_eq!((c.window_s, c.hop_s, c.quality_threshold, c.cv_folds), (6.0, 1.0, 0.42, 5));
        assert!(c.validate().is_ok());
        let zero = PipelineConfig { quality_threshold: 0.0, ..c.clone() };
        assert!(zero.validate().is_ok());
        let bad = PipelineConfig { quality_threshold: 1.5, ..c.clone() };
        assert!(bad.validate().is_err());
        let parsed: PipelineConfig = serde_json::from_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(parsed.seed, 7);
        assert_eq!(parsed.window_s, 6.0);
    }

    #[test]
    fn labels() {
        assert_eq!(segment_label(0, ConditionLabel::Stimulated), 0);
        assert_eq!(segment_label(1, ConditionLabel::Stimulated), 1);
        assert_eq!(segment_label(1, ConditionLabel::Baseline), 0);
    }
}
