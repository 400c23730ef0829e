//! Facial temperature features.
//!
//! Segment deltas (mean of the last 120 s minus mean of the first 120 s)
//! per ROI, the pairwise relative-change matrix, and deltas referenced to
//! the forehead.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::ThermalTraceSet;
use crate::hrv::{Segment, SEGMENT_S};
use crate::stats::mean;

pub const FOREHEAD_ROI: i64 = 58;

/// The 22 facial ROIs used for features, in table order, with names.
pub const SELECTED_ROIS: [(i64, &str); 22] = [
    (18, "Left side of left eyebrow"),
    (21, "Right side of left eyebrow"),
    (22, "Left side of right eyebrow"),
    (25, "Right side of right eyebrow"),
    (58, "Forehead"),
    (28, "Upper part of the nose"),
    (29, "Middle part of the nose"),
    (30, "Nose tip"),
    (32, "Left nostril"),
    (34, "Right nostril"),
    (48, "Left side of lip"),
    (49, "Outside of upper lip"),
    (50, "Right side of lip"),
    (51, "Outside of lower lip"),
    (52, "Upper lip"),
    (53, "Lower lip"),
    (54, "Left cheek away from nose"),
    (55, "Left cheek closer to nose"),
    (56, "Right cheek away from nose"),
    (57, "Right cheek closer to nose"),
    (59, "Chin"),
    (60, "Throat"),
];

pub fn selected_roi_ids() -> Vec<i64> {
    SELECTED_ROIS.iter().map(|(id, _)| *id).collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermalError {
    #[error("recording is {0:.1} s long, need at least {min} s", min = 2.0 * SEGMENT_S)]
    TooShort(f64),
    #[error("forehead roi {0} is missing")]
    MissingForehead(i64),
    #[error("roi {0} is missing")]
    MissingRoi(i64),
}

type Result<T> = std::result::Result<T, ThermalError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalFeatures {
    pub roi_ids: Vec<i64>,
    pub delta: BTreeMap<i64, f64>,
    pub forehead_relative: BTreeMap<i64, f64>,
}

impl ThermalFeatures {
    /// Flat `delta.<roi>` / `rel_forehead.<roi>` map.
    pub fn to_flat_map(&self) -> BTreeMap<String, f64> {
        let delta = self.delta.iter().map(|(id, v)| (format!("delta.{id}"), *v));
        let rel = self.forehead_relative.iter().map(|(id, v)| (format!("rel_forehead.{id}"), *v));
        delta.chain(rel).collect()
    }
}

/// Antisymmetric matrix `values[i][j] = delta[j] - delta[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeMatrix {
    pub roi_ids: Vec<i64>,
    pub values: Vec<Vec<f64>>,
}

/// Frame range covered by `segment`.
fn frames(traces: &ThermalTraceSet, segment: Segment) -> std::ops::Range<usize> {
    let n = traces.n_frames();
    let lo = ((segment.start_s * traces.fps).round().max(0.0) as usize).min(n);
    let hi = ((segment.end_s * traces.fps).round().max(0.0) as usize).min(n);
    lo..hi
}

fn check_length(traces: &ThermalTraceSet) -> Result<()> {
    if traces.n_frames() < (2.0 * SEGMENT_S * traces.fps).round() as usize {
        return Err(ThermalError::TooShort(traces.duration_s()));
    }
    Ok(())
}

/// Per-ROI mean over `segment`, keyed by ROI.
pub fn segment_means(traces: &ThermalTraceSet, segment: Segment) -> BTreeMap<i64, f64> {
    let range = frames(traces, segment);
    traces.rois.iter().map(|r| (r.roi_id, mean(&r.samples[range.clone()]))).collect()
}

/// Mean of the last 120 s minus mean of the first 120 s, per ROI.
pub fn segment_delta(traces: &ThermalTraceSet) -> Result<BTreeMap<i64, f64>> {
    check_length(traces)?;
    let n = (SEGMENT_S * traces.fps).round() as usize;
    let total = traces.n_frames();
    Ok(traces
        .rois
        .iter()
        .map(|r| {
            let first = mean(&r.samples[..n]);
            let last = mean(&r.samples[total - n..]);
            (r.roi_id, last - first)
        })
        .collect())
}

pub fn relative_matrix(deltas: &BTreeMap<i64, f64>) -> RelativeMatrix {
    let roi_ids: Vec<i64> = deltas.keys().copied().collect();
    let d: Vec<f64> = deltas.values().copied().collect();
    let values = d.iter().map(|di| d.iter().map(|dj| dj - di).collect()).collect();
    RelativeMatrix { roi_ids, values }
}

pub fn thermal_features(traces: &ThermalTraceSet, forehead_roi: i64) -> Result<ThermalFeatures> {
    if traces.roi(forehead_roi).is_none() {
        return Err(ThermalError::MissingForehead(forehead_roi));
    }
    let delta = segment_delta(traces)?;
    let reference = delta[&forehead_roi];
    let forehead_relative =
        delta.iter().map(|(&id, &d)| (id, if id == forehead_roi { 0.0 } else { d - reference })).collect();
    Ok(ThermalFeatures { roi_ids: delta.keys().copied().collect(), delta, forehead_relative })
}

/// Absolute per-ROI segment means in `order`, the thermal feature block.
pub fn feature_block(traces: &ThermalTraceSet, segment: Segment, order: &[i64]) -> Result<Vec<f64>> {
    let means = segment_means(traces, segment);
    order.iter().map(|id| means.get(id).copied().ok_or(ThermalError::MissingRoi(*id))).collect()
}
