//! Heart-rate variability from windowed heart-rate series.
//!
//! NN intervals are derived from the window-averaged heart rate, not from
//! beat detection, so the variability they carry is smoothed by the
//! estimation window. Time-domain metrics follow the usual definitions
//! (sample SDNN, rMSSD, strict `> 50 ms` pNN50); band powers come from a
//! Welch periodogram of the tachogram resampled at 4 Hz.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rppg::HrSeries;
use crate::spectral::{band_power, welch};
use crate::stats::{mean, sample_sd};

pub const NN_RANGE_MS: (f64, f64) = (250.0, 2000.0);
pub const LF_BAND_HZ: (f64, f64) = (0.04, 0.15);
pub const HF_BAND_HZ: (f64, f64) = (0.15, 0.4);
pub const RESAMPLE_HZ: f64 = 4.0;
pub const WELCH_SEGMENT: usize = 256;
pub const MIN_SPAN_S: f64 = 60.0;
pub const POWER_FLOOR: f64 = 1e-12;
pub const SEGMENT_S: f64 = 120.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HrvError {
    #[error("no NN intervals in range")]
    EmptySeries,
    #[error("need at least 3 NN intervals, got {0}")]
    TooFewIntervals(usize),
    #[error("tachogram spans {0:.1} s, need at least {MIN_SPAN_S} s")]
    TooShort(f64),
    #[error("segment {start_s}..{end_s} s lies outside the {duration_s} s series")]
    SegmentOutOfRange { start_s: f64, end_s: f64, duration_s: f64 },
    #[error("{metric} = {value:.2} exceeds the rejection limit {limit}")]
    Outlier { metric: &'static str, value: f64, limit: f64 },
}

type Result<T> = std::result::Result<T, HrvError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnSeries {
    pub intervals_ms: Vec<f64>,
    pub timestamps_s: Vec<f64>,
}

/// Seven HRV features of one segment. Serializes with the keys
/// `hr, sdnn, rmssd, pnn50, ln_hf, ln_lf, ln_lf_hf` in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvMetrics {
    #[serde(rename = "hr")]
    pub hr_mean: f64,
    pub sdnn: f64,
    pub rmssd: f64,
    pub pnn50: f64,
    pub ln_hf: f64,
    pub ln_lf: f64,
    pub ln_lf_hf: f64,
    /// Set when the tachogram was constant and both band powers sit at the floor.
    #[serde(skip)]
    pub degenerate: bool,
}

impl HrvMetrics {
    pub const NAMES: [&'static str; 7] = ["hr", "sdnn", "rmssd", "pnn50", "ln_hf", "ln_lf", "ln_lf_hf"];

    /// Values in [`HrvMetrics::NAMES`] order.
    pub fn to_array(&self) -> [f64; 7] {
        [self.hr_mean, self.sdnn, self.rmssd, self.pnn50, self.ln_hf, self.ln_lf, self.ln_lf_hf]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES.iter().position(|n| *n == name).map(|i| self.to_array()[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeDomain {
    pub sdnn: f64,
    pub rmssd: f64,
    pub pnn50: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqDomain {
    pub lf: f64,
    pub hf: f64,
    pub ln_lf: f64,
    pub ln_hf: f64,
    pub ln_lf_hf: f64,
    pub degenerate: bool,
}

/// Rejection limits applied to segment metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvLimits {
    pub max_hr_bpm: f64,
    pub max_sdnn_ms: f64,
}

impl Default for HrvLimits {
    fn default() -> Self {
        Self { max_hr_bpm: 240.0, max_sdnn_ms: 300.0 }
    }
}

/// Half-open time range `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
}

impl Segment {
    pub fn first(len_s: f64) -> Self {
        Self { start_s: 0.0, end_s: len_s }
    }

    pub fn last(duration_s: f64, len_s: f64) -> Self {
        Self { start_s: duration_s - len_s, end_s: duration_s }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }
}

pub fn hr_to_nn(hr: &HrSeries) -> Result<NnSeries> {
    let (mut intervals_ms, mut timestamps_s) = (Vec::new(), Vec::new());
    for (t, bpm) in hr.valid() {
        let nn = 60_000.0 / bpm;
        if (NN_RANGE_MS.0..=NN_RANGE_MS.1).contains(&nn) {
            intervals_ms.push(nn);
            timestamps_s.push(t);
        }
    }
    if intervals_ms.is_empty() {
        return Err(HrvError::EmptySeries);
    }
    Ok(NnSeries { intervals_ms, timestamps_s })
}

pub fn time_domain(nn: &NnSeries) -> Result<TimeDomain> {
    let x = &nn.intervals_ms;
    if x.len() < 3 {
        return Err(HrvError::TooFewIntervals(x.len()));
    }
    let diffs: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let rmssd = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
    let over = diffs.iter().filter(|d| d.abs() > 50.0).count();
    Ok(TimeDomain { sdnn: sample_sd(x), rmssd, pnn50: 100.0 * over as f64 / diffs.len() as f64 })
}

/// Linear interpolation of `(t, v)` onto `t0 + k / rate` for all grid
/// points inside `[t0, t_last]`.
fn resample(t: &[f64], v: &[f64], rate: f64) -> Vec<f64> {
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let n = ((t1 - t0) * rate + 1e-9).floor() as usize + 1;
    let mut j = 0;
    (0..n)
        .map(|k| {
            let tk = t0 + k as f64 / rate;
            while j + 2 < t.len() && t[j + 1] < tk {
                j += 1;
            }
            let span = t[j + 1] - t[j];
            let frac = ((tk - t[j]) / span).clamp(0.0, 1.0);
            v[j] + (v[j + 1] - v[j]) * frac
        })
        .collect()
}

pub fn freq_domain(nn: &NnSeries) -> Result<FreqDomain> {
    let t = &nn.timestamps_s;
    if t.len() < 2 {
        return Err(HrvError::TooShort(0.0));
    }
    let span = t[t.len() - 1] - t[0];
    if span < MIN_SPAN_S {
        return Err(HrvError::TooShort(span));
    }
    let mut grid = resample(t, &nn.intervals_ms, RESAMPLE_HZ);
    let m = mean(&grid);
    grid.iter_mut().for_each(|v| *v -= m);
    let degenerate = grid.iter().all(|v| v.abs() < 1e-9);
    let (lf, hf) = if degenerate {
        (0.0, 0.0)
    } else {
        let (f, psd) = welch(&grid, RESAMPLE_HZ, WELCH_SEGMENT, WELCH_SEGMENT / 2);
        (band_power(&f, &psd, LF_BAND_HZ.0, LF_BAND_HZ.1), band_power(&f, &psd, HF_BAND_HZ.0, HF_BAND_HZ.1))
    };
    let ln_lf = lf.max(POWER_FLOOR).ln();
    let ln_hf = hf.max(POWER_FLOOR).ln();
    Ok(FreqDomain { lf, hf, ln_lf, ln_hf, ln_lf_hf: ln_lf - ln_hf, degenerate })
}

/// Restriction of `hr` to windows centred inside `segment`.
pub fn slice_segment(hr: &HrSeries, segment: Segment) -> Result<HrSeries> {
    const SLACK: f64 = 1e-9;
    if segment.start_s < -SLACK || segment.end_s > hr.duration_s + SLACK || segment.end_s <= segment.start_s {
        return Err(HrvError::SegmentOutOfRange {
            start_s: segment.start_s,
            end_s: segment.end_s,
            duration_s: hr.duration_s,
        });
    }
    let keep: Vec<usize> = (0..hr.len()).filter(|&i| segment.contains(hr.times_s[i])).collect();
    Ok(HrSeries {
        window_s: hr.window_s,
        hop_s: hr.hop_s,
        duration_s: hr.duration_s,
        times_s: keep.iter().map(|&i| hr.times_s[i]).collect(),
        values: keep.iter().map(|&i| hr.values[i]).collect(),
        per_patch: hr.per_patch.as_ref().map(|pp| keep.iter().map(|&i| pp[i].clone()).collect()),
    })
}

/// Combines time- and frequency-domain results with the mean heart rate.
pub fn metrics_from_nn(nn: &NnSeries, hr_mean: f64) -> Result<HrvMetrics> {
    let td = time_domain(nn)?;
    let fd = freq_domain(nn)?;
    Ok(HrvMetrics {
        hr_mean,
        sdnn: td.sdnn,
        rmssd: td.rmssd,
        pnn50: td.pnn50,
        ln_hf: fd.ln_hf,
        ln_lf: fd.ln_lf,
        ln_lf_hf: fd.ln_lf_hf,
        degenerate: fd.degenerate,
    })
}

pub fn segment_metrics(hr: &HrSeries, segment: Segment) -> Result<HrvMetrics> {
    segment_metrics_with(hr, segment, &HrvLimits::default())
}

pub fn segment_metrics_with(hr: &HrSeries, segment: Segment, limits: &HrvLimits) -> Result<HrvMetrics> {
    let part = slice_segment(hr, segment)?;
    let rates: Vec<f64> = part.valid().map(|(_, v)| v).collect();
    if rates.is_empty() {
        return Err(HrvError::EmptySeries);
    }
    let metrics = metrics_from_nn(&hr_to_nn(&part)?, mean(&rates))?;
    check_limits(&metrics, limits)?;
    Ok(metrics)
}

/// Metrics of beat-to-beat NN intervals stamped inside `segment`, with
/// the mean instantaneous rate as `hr`.
pub fn nn_segment_metrics(nn: &NnSeries, segment: Segment) -> Result<HrvMetrics> {
    let (intervals_ms, timestamps_s): (Vec<f64>, Vec<f64>) = nn
        .intervals_ms
        .iter()
        .zip(&nn.timestamps_s)
        .filter(|(_, &t)| segment.contains(t))
        .map(|(&i, &t)| (i, t))
        .unzip();
    if intervals_ms.is_empty() {
        return Err(HrvError::EmptySeries);
    }
    let rates: Vec<f64> = intervals_ms.iter().map(|i| 60_000.0 / i).collect();
    metrics_from_nn(&NnSeries { intervals_ms, timestamps_s }, mean(&rates))
}

pub fn check_limits(m: &HrvMetrics, limits: &HrvLimits) -> Result<()> {
    if m.hr_mean > limits.max_hr_bpm {
        return Err(HrvError::Outlier { metric: "hr", value: m.hr_mean, limit: limits.max_hr_bpm });
    }
    if m.sdnn > limits.max_sdnn_ms {
        return Err(HrvError::Outlier { metric: "sdnn", value: m.sdnn, limit: limits.max_sdnn_ms });
    }
    Ok(())
}
