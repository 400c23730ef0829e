//! Pulse extraction from facial patch colour traces.
//!
//! [`pos_bvp`] projects temporally normalized RGB onto the
//! plane orthogonal to the skin tone (POS), [`estimate_hr`] picks the
//! dominant in-band frequency of each tapered window, [`clean_hr`] removes
//! implausible jumps and [`quality_index`] scores cross-patch agreement
//! as MAE/HR.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::RgbPatchTraceSet;
use crate::par;
use crate::spectral::{hann, PowerSpectrum};
use crate::stats::{mean, median};

/// POS sliding-window length.
pub const POS_WINDOW_S: f64 = 1.6;
pub const MIN_FPS: f64 = 15.0;
/// Pass band of plausible heart rates, 39 to 240 BPM.
pub const HR_BAND_HZ: (f64, f64) = (0.65, 4.0);
pub const MIN_NFFT: usize = 8192;
pub const DEFAULT_JUMP_BPM: f64 = 25.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RppgError {
    #[error("signal is {got_s:.3} s long, need at least {need_s:.3} s")]
    TooShort { need_s: f64, got_s: f64 },
    #[error("frame rate must be positive")]
    ZeroFps,
    #[error("frame rate {0} Hz is below the {MIN_FPS} Hz minimum")]
    FrameRateTooLow(f64),
    #[error("patch {patch_id}: a colour channel averages to zero in the window at frame {frame}")]
    ConstantChannel { patch_id: i64, frame: usize },
    #[error("no window carries a pulse peak")]
    NoPulse,
    #[error("no heart-rate values survive cleaning")]
    AllRemoved,
    #[error("per-patch estimates from at least two patches are required")]
    MissingPerPatch,
}

type Result<T> = std::result::Result<T, RppgError>;

/// Zero-mean blood volume pulse per patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvpSignal {
    pub fps: f64,
    pub patch_ids: Vec<i64>,
    pub waveforms: Vec<Vec<f64>>,
}

impl BvpSignal {
    pub fn n_samples(&self) -> usize {
        self.waveforms.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fps
    }
}

/// Windowed heart-rate estimates.
///
/// `values[k]` is the median over the patches that showed a pulse peak in
/// window `k`; `None` marks a window where none did. `per_patch[k][p]` is
/// the dominant in-band rate of patch `p` whether or not it passed that
/// test, and is `None` only for a patch with no in-band power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrSeries {
    pub window_s: f64,
    pub hop_s: f64,
    /// Length of the underlying recording.
    pub duration_s: f64,
    /// Window centres.
    pub times_s: Vec<f64>,
    pub values: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_patch: Option<Vec<Vec<Option<f64>>>>,
}

impl HrSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(time, bpm)` of every valid window.
    pub fn valid(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times_s.iter().zip(&self.values).filter_map(|(&t, v)| v.map(|v| (t, v)))
    }

    fn retain_rows(&self, keep: &[usize]) -> HrSeries {
        HrSeries {
            window_s: self.window_s,
            hop_s: self.hop_s,
            duration_s: self.duration_s,
            times_s: keep.iter().map(|&i| self.times_s[i]).collect(),
            values: keep.iter().map(|&i| self.values[i]).collect(),
            per_patch: self.per_patch.as_ref().map(|pp| keep.iter().map(|&i| pp[i].clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub mae_over_hr: f64,
}

/// POS pulse extraction, one waveform per patch.
pub fn pos_bvp(traces: &RgbPatchTraceSet) -> Result<BvpSignal> {
    let fps = traces.fps;
    if !(fps > 0.0) {
        return Err(RppgError::ZeroFps);
    }
    if fps < MIN_FPS {
        return Err(RppgError::FrameRateTooLow(fps));
    }
    let win = (POS_WINDOW_S * fps).round() as usize;
    let n = traces.n_frames();
    if n < win {
        return Err(RppgError::TooShort { need_s: POS_WINDOW_S, got_s: traces.duration_s() });
    }
    let waveforms = par::map_slice(&traces.patches, |p| pos_patch(&p.samples, win, p.patch_id))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(BvpSignal { fps, patch_ids: traces.patches.iter().map(|p| p.patch_id).collect(), waveforms })
}

fn pos_patch(rgb: &[[f64; 3]], win: usize, patch_id: i64) -> Result<Vec<f64>> {
    let n = rgb.len();
    let mut out = vec![0.0; n];
    let mut s1 = vec![0.0; win];
    let mut s2 = vec![0.0; win];
    for start in 0..=n - win {
        let window = &rgb[start..start + win];
        let mut mu = [0.0; 3];
        for px in window {
            for c in 0..3 {
                mu[c] += px[c];
            }
        }
        for m in &mut mu {
            *m /= win as f64;
        }
        if mu.contains(&0.0) {
            return Err(RppgError::ConstantChannel { patch_id, frame: start });
        }
        for (k, px) in window.iter().enumerate() {
            let (r, g, b) = (px[0] / mu[0], px[1] / mu[1], px[2] / mu[2]);
            s1[k] = g - b;
            s2[k] = g + b - 2.0 * r;
        }
        let (sd1, sd2) = (pop_sd(&s1), pop_sd(&s2));
        let alpha = if sd2 > 0.0 { sd1 / sd2 } else { 0.0 };
        let h_mean = mean(&s1) + alpha * mean(&s2);
        for k in 0..win {
            out[start + k] += s1[k] + alpha * s2[k] - h_mean;
        }
    }
    Ok(out)
}

fn pop_sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Settings for [`estimate_hr_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrEstimator {
    pub window_s: f64,
    pub hop_s: f64,
    /// Minimum ratio of the in-band peak power to the mean in-band power
    /// for a window to count as carrying a pulse.
    pub min_peak_ratio: f64,
}

impl Default for HrEstimator {
    fn default() -> Self {
        Self { window_s: 6.0, hop_s: 1.0, min_peak_ratio: DEFAULT_MIN_PEAK_RATIO }
    }
}

/// Peak-to-mean in-band power below which a window is flagged as pulseless.
pub const DEFAULT_MIN_PEAK_RATIO: f64 = 8.0;

pub fn estimate_hr(bvp: &BvpSignal, window_s: f64, hop_s: f64) -> Result<HrSeries> {
    estimate_hr_with(bvp, &HrEstimator { window_s, hop_s, ..HrEstimator::default() })
}

/// Dominant-frequency heart rate per window and patch.
pub fn estimate_hr_with(bvp: &BvpSignal, cfg: &HrEstimator) -> Result<HrSeries> {
    let fps = bvp.fps;
    let win = (cfg.window_s * fps).round() as usize;
    let hop = ((cfg.hop_s * fps).round() as usize).max(1);
    let n = bvp.n_samples();
    if win < 2 || n < win {
        return Err(RppgError::TooShort { need_s: cfg.window_s, got_s: bvp.duration_s() });
    }
    let n_windows = (n - win) / hop + 1;
    let nfft = win.next_power_of_two().max(MIN_NFFT);
    let spectrum = PowerSpectrum::new(nfft);
    let taper = hann(win);
    let df = fps / nfft as f64;
    let lo = (HR_BAND_HZ.0 / df).ceil() as usize;
    let hi = ((HR_BAND_HZ.1 / df).floor() as usize).min(nfft / 2);

    let estimates = par::map_range(n_windows, |w| {
        let start = w * hop;
        bvp.waveforms
            .iter()
            .map(|wave| {
                let seg = &wave[start..start + win];
                let m = mean(seg);
                let tapered: Vec<f64> = seg.iter().zip(&taper).map(|(v, t)| (v - m) * t).collect();
                let power = spectrum.compute(&tapered);
                let band = &power[lo..=hi];
                let (k, &peak) = band.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
                if peak <= 0.0 {
                    return None;
                }
                let pulse = peak >= cfg.min_peak_ratio * mean(band);
                Some((60.0 * (lo + k) as f64 * df, pulse))
            })
            .collect::<Vec<Option<(f64, bool)>>>()
    });
    let values: Vec<Option<f64>> = estimates
        .iter()
        .map(|row| {
            let valid: Vec<f64> = row.iter().flatten().filter(|e| e.1).map(|e| e.0).collect();
            (!valid.is_empty()).then(|| median(&valid))
        })
        .collect();
    let per_patch = estimates.into_iter().map(|row| row.into_iter().map(|e| e.map(|e| e.0)).collect()).collect();
    if values.iter().all(Option::is_none) {
        return Err(RppgError::NoPulse);
    }
    Ok(HrSeries {
        window_s: win as f64 / fps,
        hop_s: hop as f64 / fps,
        duration_s: bvp.duration_s(),
        times_s: (0..n_windows).map(|w| (w * hop) as f64 / fps + 0.5 * win as f64 / fps).collect(),
        values,
        per_patch: Some(per_patch),
    })
}

/// Removes heart-rate points that jump by more than `jump_bpm` from their
/// predecessor.
///
/// Pulseless windows are dropped first. Of each offending adjacent pair,
/// the member farther from the median of the valid input is removed (the
/// later one on ties); passes repeat until none removes anything.
pub fn clean_hr(hr: &HrSeries, jump_bpm: f64) -> Result<HrSeries> {
    let mut keep: Vec<usize> = (0..hr.len()).filter(|&i| hr.values[i].is_some()).collect();
    if keep.is_empty() {
        return Err(RppgError::AllRemoved);
    }
    let value = |i: usize| hr.values[i].unwrap_or(f64::NAN);
    let med = median(&keep.iter().map(|&i| value(i)).collect::<Vec<_>>());
    loop {
        let mut next: Vec<usize> = Vec::with_capacity(keep.len());
        for &i in &keep {
            match next.last() {
                Some(&prev) if (value(i) - value(prev)).abs() > jump_bpm => {
                    if (value(prev) - med).abs() > (value(i) - med).abs() {
                        next.pop();
                        next.push(i);
                    }
                }
                _ => next.push(i),
            }
        }
        let changed = next.len() != keep.len();
        keep = next;
        if !changed {
            break;
        }
    }
    Ok(hr.retain_rows(&keep))
}

/// MAE/HR: mean cross-patch absolute deviation from the per-window
/// median, divided by the mean aggregated heart rate.
pub fn quality_index(hr: &HrSeries) -> Result<QualityScore> {
    let per_patch = hr.per_patch.as_ref().ok_or(RppgError::MissingPerPatch)?;
    if per_patch.first().map_or(0, Vec::len) < 2 {
        return Err(RppgError::MissingPerPatch);
    }
    let mut maes = Vec::new();
    let mut rates = Vec::new();
    for (row, value) in per_patch.iter().zip(&hr.values) {
        let Some(v) = value else { continue };
        let valid: Vec<f64> = row.iter().flatten().copied().collect();
        if valid.is_empty() {
            continue;
        }
        let m = median(&valid);
        maes.push(valid.iter().map(|x| (x - m).abs()).sum::<f64>() / valid.len() as f64);
        rates.push(*v);
    }
    if rates.is_empty() {
        return Err(RppgError::NoPulse);
    }
    Ok(QualityScore { mae_over_hr: mean(&maes) / mean(&rates) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::PatchTrace;

    fn series(values: &[f64]) -> HrSeries {
        HrSeries {
            window_s: 6.0,
            hop_s: 1.0,
            duration_s: values.len() as f64 + 5.0,
            times_s: (0..values.len()).map(|i| i as f64 + 3.0).collect(),
            values: values.iter().map(|&v| Some(v)).collect(),
            per_patch: None,
        }
    }

    fn bvp_from(waves: Vec<Vec<f64>>, fps: f64) -> BvpSignal {
        BvpSignal { fps, patch_ids: (0..waves.len() as i64).collect(), waveforms: waves }
    }

    fn tone(freq: f64, fps: f64, secs: f64) -> Vec<f64> {
        (0..(fps * secs) as usize).map(|i| (std::f64::consts::TAU * freq * i as f64 / fps).sin()).collect()
    }

    #[test]
    fn constant_rgb_gives_zero_bvp() {
        let set = RgbPatchTraceSet {
            fps: 30.0,
            patches: vec![PatchTrace { patch_id: 1, samples: vec![[0.6, 0.4, 0.3]; 90] }],
        };
        let bvp = pos_bvp(&set).unwrap();
        assert!(bvp.waveforms[0].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn pos_preconditions() {
        let mut set = RgbPatchTraceSet {
            fps: 30.0,
            patches: vec![PatchTrace { patch_id: 1, samples: vec![[0.6, 0.4, 0.3]; 40] }],
        };
        assert!(matches!(pos_bvp(&set), Err(RppgError::TooShort { .. })));
        set.fps = 0.0;
        assert_eq!(pos_bvp(&set), Err(RppgError::ZeroFps));
        set.fps = 10.0;
        assert_eq!(pos_bvp(&set), Err(RppgError::FrameRateTooLow(10.0)));
        set.fps = 20.0;
        set.patches[0].samples = vec![[0.6, 0.0, 0.3]; 40];
        assert!(matches!(pos_bvp(&set), Err(RppgError::ConstantChannel { .. })));
    }

    #[test]
    fn pure_tone_is_72_bpm() {
        let bvp = bvp_from(vec![tone(1.2, 30.0, 30.0)], 30.0);
        let hr = estimate_hr(&bvp, 6.0, 1.0).unwrap();
        assert_eq!(hr.len(), 25);
        for v in &hr.values {
            assert!((v.unwrap() - 72.0).abs() <= 0.3, "{v:?}");
        }
    }

    #[test]
    fn median_ignores_corrupted_patch() {
        let bvp = bvp_from(vec![tone(1.2, 30.0, 12.0), tone(1.2, 30.0, 12.0), tone(140.0 / 60.0, 30.0, 12.0)], 30.0);
        let hr = estimate_hr(&bvp, 6.0, 1.0).unwrap();
        for v in &hr.values {
            assert!((v.unwrap() - 72.0).abs() <= 0.3);
        }
        let q = quality_index(&hr).unwrap().mae_over_hr;
        assert!(q > 0.2);
    }

    #[test]
    fn silent_signal_has_no_pulse() {
        let bvp = bvp_from(vec![vec![0.0; 300]], 30.0);
        assert_eq!(estimate_hr(&bvp, 6.0, 1.0), Err(RppgError::NoPulse));
    }

    #[test]
    fn clean_worked_examples() {
        let out = clean_hr(&series(&[70.0, 100.0, 72.0]), 25.0).unwrap();
        assert_eq!(out.values, vec![Some(70.0), Some(72.0)]);
        assert_eq!(out.times_s, vec![3.0, 5.0]);
        let out = clean_hr(&series(&[70.0, 71.0, 72.0]), 25.0).unwrap();
        assert_eq!(out.len(), 3);
        let out = clean_hr(&series(&[70.0, 100.0]), 25.0).unwrap();
        assert_eq!(out.values, vec![Some(70.0)]);
    }

    #[test]
    fn clean_drops_invalid_windows() {
        let mut s = series(&[70.0, 71.0, 72.0]);
        s.values[1] = None;
        assert_eq!(clean_hr(&s, 25.0).unwrap().len(), 2);
        s.values = vec![None; 3];
        assert_eq!(clean_hr(&s, 25.0), Err(RppgError::AllRemoved));
    }

    #[test]
    fn quality_worked_example() {
        let mut s = series(&[70.0]);
        s.per_patch = Some(vec![vec![Some(60.0), Some(70.0), Some(80.0)]]);
        let q = quality_index(&s).unwrap().mae_over_hr;
        assert!((q - (20.0 / 3.0) / 70.0).abs() < 1e-12);
        s.per_patch = Some(vec![vec![Some(70.0); 3]]);
        assert_eq!(quality_index(&s).unwrap().mae_over_hr, 0.0);
        s.per_patch = None;
        assert_eq!(quality_index(&s), Err(RppgError::MissingPerPatch));
    }
}
