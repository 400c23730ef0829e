//! Reference ECG: R-peak detection and r-PPG agreement sweeps.
//!
//! The detector band-passes the ECG (8-20 Hz, forward-backward biquads),
//! squares it and compares a QRS-length moving average against a
//! beat-length moving average plus an offset. Blocks of interest that are
//! long enough yield one peak each; peaks closer than the refractory period
//! keep the larger one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::EcgTrace;
use crate::hrv::{HrvMetrics, NnSeries, NN_RANGE_MS};
use crate::par;
use crate::stats::{mean, pearson};

pub const BAND_HZ: (f64, f64) = (8.0, 20.0);
pub const QRS_WINDOW_S: f64 = 0.097;
pub const BEAT_WINDOW_S: f64 = 0.611;
pub const OFFSET_FACTOR: f64 = 0.08;
pub const MIN_BLOCK_S: f64 = 0.080;
pub const REFRACTORY_S: f64 = 0.300;
pub const MIN_FS: f64 = 125.0;
pub const MIN_DURATION_S: f64 = 10.0;

/// Metrics compared against the reference, in table column order.
pub const AGREEMENT_METRICS: [&str; 6] = ["hr", "rmssd", "pnn50", "sdnn", "ln_hf", "ln_lf"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EcgError {
    #[error("no heartbeats detected")]
    NoBeatsDetected,
    #[error("sampling rate {0} Hz is below {MIN_FS} Hz")]
    SamplingTooLow(f64),
    #[error("recording is {0:.1} s long, need at least {MIN_DURATION_S} s")]
    TooShort(f64),
    #[error("threshold {threshold}: {n} pairs retained, need at least 3")]
    InsufficientPairs { threshold: f64, n: usize },
}

type Result<T> = std::result::Result<T, EcgError>;

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn butterworth(fs: f64, f0: f64, high_pass: bool) -> Self {
        let w0 = std::f64::consts::TAU * f0 / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let a0 = 1.0 + alpha;
        let b = if high_pass {
            [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0]
        } else {
            [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0]
        };
        Self { b: b.map(|v| v / a0), a: [-2.0 * cos / a0, (1.0 - alpha) / a0] }
    }

    fn run(&self, x: &mut [f64]) {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let out = self.b[0] * input + z1;
            z1 = self.b[1] * input - self.a[0] * out + z2;
            z2 = self.b[2] * input - self.a[1] * out;
            *v = out;
        }
    }
}

/// Zero-phase 8-20 Hz band-pass: a second-order Butterworth high-pass and
/// low-pass section run forward then backward over an odd-reflected pad.
pub fn bandpass(x: &[f64], fs: f64) -> Vec<f64> {
    let sections = [Biquad::butterworth(fs, BAND_HZ.0, true), Biquad::butterworth(fs, BAND_HZ.1, false)];
    let n = x.len();
    let pad = (fs.round() as usize).min(n.saturating_sub(1));
    let mut buf = Vec::with_capacity(n + 2 * pad);
    buf.extend((1..=pad).rev().map(|k| 2.0 * x[0] - x[k]));
    buf.extend_from_slice(x);
    buf.extend((1..=pad).map(|k| 2.0 * x[n - 1] - x[n - 1 - k]));
    for s in &sections {
        s.run(&mut buf);
    }
    buf.reverse();
    for s in &sections {
        s.run(&mut buf);
    }
    buf.reverse();
    buf[pad..pad + n].to_vec()
}

/// Centred moving average over `w` samples, truncated at the edges.
fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v;
        prefix.push(acc);
    }
    let half = w / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + w - half).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// R-peak times in seconds (including the trace's `t0`).
pub fn detect_r_peak_times(ecg: &EcgTrace) -> Result<Vec<f64>> {
    let fs = ecg.fs;
    if fs < MIN_FS {
        return Err(EcgError::SamplingTooLow(fs));
    }
    if ecg.duration_s() < MIN_DURATION_S {
        return Err(EcgError::TooShort(ecg.duration_s()));
    }
    let x = &ecg.samples;
    let range = x.iter().copied().fold(f64::NEG_INFINITY, f64::max) - x.iter().copied().fold(f64::INFINITY, f64::min);
    if !(range > 0.0) {
        return Err(EcgError::NoBeatsDetected);
    }
    let filtered = bandpass(x, fs);
    let peak_abs = filtered.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak_abs <= 1e-9 * range {
        return Err(EcgError::NoBeatsDetected);
    }
    let squared: Vec<f64> = filtered.iter().map(|v| v * v).collect();
    let ma_qrs = moving_average(&squared, (QRS_WINDOW_S * fs).round() as usize);
    let ma_beat = moving_average(&squared, (BEAT_WINDOW_S * fs).round() as usize);
    let offset = OFFSET_FACTOR * mean(&squared);
    let min_block = (MIN_BLOCK_S * fs).round() as usize;

    let mut peaks: Vec<usize> = Vec::new();
    let refractory = (REFRACTORY_S * fs).round() as usize;
    let mut i = 0;
    while i < x.len() {
        if ma_qrs[i] <= ma_beat[i] + offset {
            i += 1;
            continue;
        }
        let start = i;
        while i < x.len() && ma_qrs[i] > ma_beat[i] + offset {
            i += 1;
        }
        if i - start < min_block {
            continue;
        }
        let peak = (start..i).max_by(|&a, &b| filtered[a].total_cmp(&filtered[b]).then(b.cmp(&a))).unwrap_or(start);
        match peaks.last_mut() {
            Some(last) if peak - *last < refractory => {
                if filtered[peak] > filtered[*last] {
                    *last = peak;
                }
            }
            _ => peaks.push(peak),
        }
    }
    if peaks.is_empty() {
        return Err(EcgError::NoBeatsDetected);
    }
    Ok(peaks.into_iter().map(|p| ecg.t0 + p as f64 / fs).collect())
}

/// NN intervals between successive detected R peaks, stamped at the later
/// peak. Intervals outside the physiological range are dropped.
pub fn detect_r_peaks(ecg: &EcgTrace) -> Result<NnSeries> {
    let peaks = detect_r_peak_times(ecg)?;
    let (mut intervals_ms, mut timestamps_s) = (Vec::new(), Vec::new());
    for w in peaks.windows(2) {
        let nn = 1000.0 * (w[1] - w[0]);
        if (NN_RANGE_MS.0..=NN_RANGE_MS.1).contains(&nn) {
            intervals_ms.push(nn);
            timestamps_s.push(w[1]);
        }
    }
    if intervals_ms.is_empty() {
        return Err(EcgError::NoBeatsDetected);
    }
    Ok(NnSeries { intervals_ms, timestamps_s })
}

/// One r-PPG segment paired with its reference-ECG counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementPair {
    pub session_id: String,
    /// `first120` or `last120`; needed for the delta view.
    #[serde(default)]
    pub segment: Option<String>,
    pub quality: f64,
    pub rppg: HrvMetrics,
    pub ecg: HrvMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub threshold: f64,
    /// Keyed by [`AGREEMENT_METRICS`]; `None` when a metric is constant
    /// among the retained pairs.
    pub correlations: BTreeMap<String, Option<Correlation>>,
    pub n: usize,
}

impl AgreementRow {
    pub fn get(&self, metric: &str) -> Option<Correlation> {
        self.correlations.get(metric).copied().flatten()
    }
}

/// Correlations over the pairs whose quality index is at most `threshold`.
pub fn agreement_at(pairs: &[AgreementPair], threshold: f64) -> Result<AgreementRow> {
    let kept: Vec<&AgreementPair> = pairs.iter().filter(|p| p.quality <= threshold).collect();
    if kept.len() < 3 {
        return Err(EcgError::InsufficientPairs { threshold, n: kept.len() });
    }
    let correlations = AGREEMENT_METRICS
        .iter()
        .map(|&name| {
            let x: Vec<f64> = kept.iter().filter_map(|p| p.rppg.get(name)).collect();
            let y: Vec<f64> = kept.iter().filter_map(|p| p.ecg.get(name)).collect();
            let c = pearson(&x, &y).ok().map(|t| Correlation { r: t.statistic, p: t.p_value });
            (name.to_owned(), c)
        })
        .collect();
    Ok(AgreementRow { threshold, correlations, n: kept.len() })
}

pub fn agreement_sweep(pairs: &[AgreementPair], thresholds: &[f64]) -> Result<Vec<AgreementRow>> {
    par::map_slice(thresholds, |&t| agreement_at(pairs, t)).into_iter().collect()
}

/// Per-session `last120 - first120` differences of both metric sets.
/// The delta pair inherits the worse (larger) quality of its two segments.
pub fn session_deltas(pairs: &[AgreementPair]) -> Vec<AgreementPair> {
    let mut by_session: BTreeMap<&str, (Option<&AgreementPair>, Option<&AgreementPair>)> = BTreeMap::new();
    for p in pairs {
        let slot = by_session.entry(&p.session_id).or_default();
        match p.segment.as_deref() {
            Some("first120") => slot.0 = Some(p),
            Some("last120") => slot.1 = Some(p),
            _ => {}
        }
    }
    let diff = |a: &HrvMetrics, b: &HrvMetrics| HrvMetrics {
        hr_mean: b.hr_mean - a.hr_mean,
        sdnn: b.sdnn - a.sdnn,
        rmssd: b.rmssd - a.rmssd,
        pnn50: b.pnn50 - a.pnn50,
        ln_hf: b.ln_hf - a.ln_hf,
        ln_lf: b.ln_lf - a.ln_lf,
        ln_lf_hf: b.ln_lf_hf - a.ln_lf_hf,
        degenerate: false,
    };
    by_session
        .into_iter()
        .filter_map(|(id, pair)| {
            let (first, last) = (pair.0?, pair.1?);
            Some(AgreementPair {
                session_id: id.to_owned(),
                segment: Some("delta".into()),
                quality: first.quality.max(last.quality),
                rppg: diff(&first.rppg, &last.rppg),
                ecg: diff(&first.ecg, &last.ecg),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(fs: f64, secs: f64, value: f64) -> EcgTrace {
        EcgTrace { fs, t0: 0.0, samples: vec![value; (fs * secs) as usize] }
    }

    #[test]
    fn flat_line_has_no_beats() {
        assert_eq!(detect_r_peaks(&flat(250.0, 20.0, 0.0)), Err(EcgError::NoBeatsDetected));
        assert_eq!(detect_r_peaks(&flat(250.0, 20.0, 1.3)), Err(EcgError::NoBeatsDetected));
    }

    #[test]
    fn preconditions() {
        assert_eq!(detect_r_peaks(&flat(100.0, 20.0, 0.0)), Err(EcgError::SamplingTooLow(100.0)));
        assert!(matches!(detect_r_peaks(&flat(250.0, 5.0, 0.0)), Err(EcgError::TooShort(_))));
    }

    #[test]
    fn bandpass_rejects_dc_and_passes_mid_band() {
        let fs = 250.0;
        let dc = bandpass(&vec![2.0; 2500], fs);
        assert!(dc[500..2000].iter().all(|v| v.abs() < 1e-6));
        let tone: Vec<f64> = (0..2500).map(|i| (std::f64::consts::TAU * 13.0 * i as f64 / fs).sin()).collect();
        let out = bandpass(&tone, fs);
        let amp = out[500..2000].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(amp > 0.7 && amp < 1.05, "{amp}");
    }

    #[test]
    fn moving_average_centred() {
        let ma = moving_average(&[0.0, 0.0, 3.0, 0.0, 0.0], 3);
        assert_eq!(ma, vec![0.0, 1.0, 1.0, 1.0, 0.0]);
    }

    fn metrics(v: f64) -> HrvMetrics {
        HrvMetrics {
            hr_mean: v,
            sdnn: 2.0 * v,
            rmssd: v + 1.0,
            pnn50: v * v,
            ln_hf: -v,
            ln_lf: v / 3.0,
            ln_lf_hf: v / 3.0 + v,
            degenerate: false,
        }
    }

    fn pair(i: usize, quality: f64) -> AgreementPair {
        AgreementPair {
            session_id: format!("s{i}"),
            segment: None,
            quality,
            rppg: metrics(i as f64),
            ecg: metrics(i as f64),
        }
    }

    #[test]
    fn identical_metrics_correlate_perfectly() {
        let pairs: Vec<_> = (0..10).map(|i| pair(i, 0.3 + 0.02 * i as f64)).collect();
        let rows = agreement_sweep(&pairs, &[0.36, 0.40, 0.48]).unwrap();
        for row in &rows {
            for name in AGREEMENT_METRICS {
                assert!((row.get(name).unwrap().r - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(rows.iter().map(|r| r.n).collect::<Vec<_>>(), vec![4, 6, 10]);
    }

    #[test]
    fn too_strict_threshold() {
        let pairs: Vec<_> = (0..5).map(|i| pair(i, 0.5)).collect();
        assert_eq!(agreement_at(&pairs, 0.3), Err(EcgError::InsufficientPairs { threshold: 0.3, n: 0 }));
    }

    #[test]
    fn deltas_pair_segments() {
        let mut a = pair(1, 0.2);
        a.session_id = "x".into();
        a.segment = Some("first120".into());
        let mut b = pair(3, 0.4);
        b.session_id = "x".into();
        b.segment = Some("last120".into());
        let d = session_deltas(&[a, b]);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].quality, 0.4);
        assert_eq!(d[0].rppg.hr_mean, 2.0);
    }
}
