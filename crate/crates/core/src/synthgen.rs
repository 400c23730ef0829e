//! Synthetic traces and datasets with known ground truth.
//!
//! Every generator is a pure function of its spec; all randomness comes
//! from [`Rng`] streams derived from the spec's seed.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{
    self, ConditionLabel, EcgTrace, PatchTrace, RgbPatchTraceSet, RoiTrace, SessionManifest, ThermalTraceSet,
};
use crate::hrv::SEGMENT_S;
use crate::ml::{Dataset, FeatureVector, Mode};
use crate::rng::Rng;
use crate::rppg::HrSeries;
use crate::thermal::SELECTED_ROIS;

pub const BPM_RANGE: (f64, f64) = (39.0, 240.0);
pub const RR_RANGE_MS: (f64, f64) = (250.0, 2000.0);
/// Full width at half maximum of a synthetic R wave.
pub const SPIKE_FWHM_S: f64 = 0.020;
/// Pulse amplitude of R and B relative to G.
pub const CHANNEL_GAIN: [f64; 3] = [0.5, 1.0, 0.3];
/// Mean G baseline on the 0–255 scale, used to convert SNR to noise sigma.
pub const MEAN_G_BASELINE: f64 = 110.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("rr interval {0} ms outside [250, 2000]")]
    InvalidRr(f64),
    #[error("duration {0} s is shorter than two 120-s segments")]
    TooShort(f64),
}

type Result<T> = std::result::Result<T, SynthError>;

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::InvalidSpec(msg.into())
}

/// Heart rate as a function of time, in BPM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HrProfile {
    Constant {
        bpm: f64,
    },
    /// Linear from `from` at `start_s` to `to` at `end_s`, flat outside.
    Ramp {
        from: f64,
        to: f64,
        start_s: f64,
        end_s: f64,
    },
    /// `(start_s, bpm)` pairs; each level holds until the next start.
    Steps {
        levels: Vec<(f64, f64)>,
    },
    Sinusoid {
        mean: f64,
        amplitude: f64,
        freq_hz: f64,
    },
    /// `base` plus a sinusoidal modulation.
    Modulated {
        base: Box<HrProfile>,
        amplitude: f64,
        freq_hz: f64,
    },
}

impl HrProfile {
    pub fn bpm_at(&self, t: f64) -> f64 {
        match self {
            HrProfile::Constant { bpm } => *bpm,
            HrProfile::Ramp { from, to, start_s, end_s } => {
                if t <= *start_s {
                    *from
                } else if t >= *end_s {
                    *to
                } else {
                    from + (to - from) * (t - start_s) / (end_s - start_s)
                }
            }
            HrProfile::Steps { levels } => levels
                .iter()
                .take_while(|(start, _)| *start <= t)
                .last()
                .or(levels.first())
                .map_or(f64::NAN, |(_, bpm)| *bpm),
            HrProfile::Sinusoid { mean, amplitude, freq_hz } => mean + amplitude * (TAU * freq_hz * t).sin(),
            HrProfile::Modulated { base, amplitude, freq_hz } => base.bpm_at(t) + amplitude * (TAU * freq_hz * t).sin(),
        }
    }

    /// Mean BPM over `[a, b]` by the trapezoid rule at 1-ms resolution.
    pub fn mean_over(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return self.bpm_at(a);
        }
        let n = ((b - a) * 1000.0).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        let inner: f64 = (1..n).map(|k| self.bpm_at(a + k as f64 * h)).sum();
        (0.5 * (self.bpm_at(a) + self.bpm_at(b)) + inner) / n as f64
    }

    fn bounds(&self) -> (f64, f64) {
        match self {
            HrProfile::Constant { bpm } => (*bpm, *bpm),
            HrProfile::Ramp { from, to, .. } => (from.min(*to), from.max(*to)),
            HrProfile::Steps { levels } => {
                levels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, l| (acc.0.min(l.1), acc.1.max(l.1)))
            }
            HrProfile::Sinusoid { mean, amplitude, .. } => (mean - amplitude.abs(), mean + amplitude.abs()),
            HrProfile::Modulated { base, amplitude, .. } => {
                let (lo, hi) = base.bounds();
                (lo - amplitude.abs(), hi + amplitude.abs())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            HrProfile::Steps { levels } if levels.is_empty() => return Err(invalid("step profile without levels")),
            HrProfile::Ramp { start_s, end_s, .. } if !(end_s > start_s) => {
                return Err(invalid("ramp end must follow its start"))
            }
            _ => {}
        }
        let (lo, hi) = self.bounds();
        if !(lo >= BPM_RANGE.0 && hi <= BPM_RANGE.1) {
            return Err(invalid(format!("hr profile spans [{lo}, {hi}] bpm, outside [39, 240]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub duration_s: f64,
    pub fps: f64,
    /// Spacing of the ground-truth HR samples.
    pub hop_s: f64,
    pub hr_profile: HrProfile,
    /// Relative pulse amplitude on G.
    pub modulation_depth: f64,
    /// White-noise sigma per channel on the 0–255 scale.
    pub noise_sigma: f64,
    pub n_patches: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            duration_s: 300.0,
            fps: 30.0,
            hop_s: 1.0,
            hr_profile: HrProfile::Constant { bpm: 72.0 },
            modulation_depth: 0.02,
            noise_sigma: 0.0,
            n_patches: 8,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.fps > 0.0 && self.hop_s > 0.0) {
            return Err(invalid("duration, fps and hop must be positive"));
        }
        if self.n_patches == 0 {
            return Err(invalid("need at least one patch"));
        }
        if !(0.0..1.0).contains(&self.modulation_depth) {
            return Err(invalid("modulation depth must lie in [0, 1)"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(invalid("noise sigma must be non-negative"));
        }
        self.hr_profile.validate()
    }

    /// Noise sigma giving `snr_db` against the G pulse of an average patch.
    pub fn noise_for_snr(modulation_depth: f64, snr_db: f64) -> f64 {
        let pulse_rms = modulation_depth * MEAN_G_BASELINE / 2f64.sqrt();
        pulse_rms / 10f64.powf(snr_db / 20.0)
    }
}

/// RGB traces with a pulse following `spec.hr_profile`, and the true HR
/// sampled every `hop_s` seconds from 0 to the end of the recording.
pub fn synth_rppg(spec: &SynthSpec) -> Result<(RgbPatchTraceSet, HrSeries)> {
    spec.validate()?;
    let n = (spec.fps * spec.duration_s).round() as usize;
    let dt = 1.0 / spec.fps;

    let mut phase = Vec::with_capacity(n);
    let mut acc = 0.0;
    let mut prev_f = spec.hr_profile.bpm_at(0.0) / 60.0;
    for k in 0..n {
        let f = spec.hr_profile.bpm_at(k as f64 * dt) / 60.0;
        if k > 0 {
            acc += PI * (prev_f + f) * dt;
        }
        phase.push(acc);
        prev_f = f;
    }
    let pulse: Vec<f64> = phase.iter().map(|p| p.cos()).collect();

    let mut base_rng = Rng::derive(spec.seed, 0);
    let baselines: Vec<[f64; 3]> = (0..spec.n_patches)
        .map(|_| [base_rng.uniform(140.0, 170.0), base_rng.uniform(95.0, 125.0), base_rng.uniform(75.0, 100.0)])
        .collect();

    let patches = crate::par::map_range(spec.n_patches, |p| {
        let mut rng = Rng::derive(spec.seed, 1 + p as u64);
        let b = baselines[p];
        let samples = pulse
            .iter()
            .map(|c| {
                let mut px = [0.0; 3];
                for ch in 0..3 {
                    let clean = b[ch] * (1.0 + CHANNEL_GAIN[ch] * spec.modulation_depth * c);
                    let noise = if spec.noise_sigma > 0.0 { spec.noise_sigma * rng.normal() } else { 0.0 };
                    px[ch] = (clean + noise) / 255.0;
                }
                px
            })
            .collect();
        PatchTrace { patch_id: p as i64, samples }
    });

    let n_truth = (spec.duration_s / spec.hop_s + 1e-9).floor() as usize + 1;
    let times_s: Vec<f64> = (0..n_truth).map(|k| k as f64 * spec.hop_s).collect();
    let truth = HrSeries {
        window_s: 0.0,
        hop_s: spec.hop_s,
        duration_s: spec.duration_s,
        values: times_s.iter().map(|&t| Some(spec.hr_profile.bpm_at(t))).collect(),
        times_s,
        per_patch: None,
    };
    Ok((RgbPatchTraceSet { fps: spec.fps, patches }, truth))
}

/// True mean HR over each window of `est`, aligned with its centres.
pub fn truth_for_windows(profile: &HrProfile, est: &HrSeries) -> Vec<f64> {
    est.times_s.iter().map(|&c| profile.mean_over(c - est.window_s / 2.0, c + est.window_s / 2.0)).collect()
}

/// Gaussian R waves at the cumulative sums of `rr_ms`, on a flat baseline
/// with one second of tail. Returns the trace and the exact peak times.
pub fn synth_ecg(rr_ms: &[f64], fs: f64) -> Result<(EcgTrace, Vec<f64>)> {
    if !(fs > 0.0) {
        return Err(invalid("fs must be positive"));
    }
    if rr_ms.is_empty() {
        return Err(invalid("empty rr sequence"));
    }
    if let Some(&bad) = rr_ms.iter().find(|rr| !(RR_RANGE_MS.0..=RR_RANGE_MS.1).contains(*rr)) {
        return Err(SynthError::InvalidRr(bad));
    }
    let mut peaks = Vec::with_capacity(rr_ms.len());
    let mut t = 0.0;
    for rr in rr_ms {
        t += rr / 1000.0;
        peaks.push(t);
    }
    let n = ((t + 1.0) * fs).round() as usize;
    let sigma = SPIKE_FWHM_S / (2.0 * (2.0 * 2f64.ln()).sqrt());
    let reach = (5.0 * sigma * fs).ceil() as isize;
    let mut samples = vec![0.0; n];
    for &p in &peaks {
        let centre = (p * fs).round() as isize;
        for k in (centre - reach).max(0)..(centre + reach + 1).min(n as isize) {
            let d = k as f64 / fs - p;
            samples[k as usize] += (-0.5 * (d / sigma).powi(2)).exp();
        }
    }
    Ok((EcgTrace { fs, t0: 0.0, samples }, peaks))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalSynthSpec {
    /// `(roi_id, baseline °C, step °C)`.
    pub rois: Vec<(i64, f64, f64)>,
    pub fps: f64,
    pub duration_s: f64,
    /// Linear drift in °C per second.
    #[serde(default)]
    pub drift: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Each ROI holds its baseline for the first half of the recording and
/// baseline + step for the second half.
pub fn synth_thermal(spec: &ThermalSynthSpec) -> Result<ThermalTraceSet> {
    if !(spec.fps > 0.0) || !(spec.noise_sigma >= 0.0) {
        return Err(invalid("fps must be positive and noise non-negative"));
    }
    if spec.duration_s < 2.0 * SEGMENT_S {
        return Err(SynthError::TooShort(spec.duration_s));
    }
    let mut ids: Vec<i64> = spec.rois.iter().map(|r| r.0).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("duplicate roi id"));
    }
    let n = (spec.fps * spec.duration_s).round() as usize;
    let half = n / 2;
    let mut rois: Vec<RoiTrace> = spec
        .rois
        .iter()
        .enumerate()
        .map(|(i, &(roi_id, base, step))| {
            let mut rng = Rng::derive(spec.seed, i as u64);
            let samples = (0..n)
                .map(|k| {
                    let mut v = base + spec.drift * k as f64 / spec.fps;
                    if k >= half {
                        v += step;
                    }
                    if spec.noise_sigma > 0.0 {
                        v += spec.noise_sigma * rng.normal();
                    }
                    v
                })
                .collect();
            RoiTrace { roi_id, samples }
        })
        .collect();
    rois.sort_by_key(|r| r.roi_id);
    Ok(ThermalTraceSet { fps: spec.fps, rois, invalid_rois: vec![] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_per_class: usize,
    pub n_features: usize,
    /// Distance between class means on each informative feature, in σ.
    pub separation: f64,
    pub informative: Vec<usize>,
    /// Leading columns treated as the r-PPG block.
    pub rppg_width: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(n_per_class: usize, n_features: usize, separation: f64, seed: u64) -> Self {
        Self {
            n_per_class,
            n_features,
            separation,
            informative: (0..n_features.min(2)).collect(),
            rppg_width: n_features.min(7),
            seed,
        }
    }
}

/// Two Gaussian classes at `±separation/2` on the informative features,
/// pure N(0, 1) noise elsewhere. Session `syn<i>` holds the i-th example of
/// each class, so grouped splits keep the pair together.
pub fn synth_dataset(n_per_class: usize, n_features: usize, separation: f64, seed: u64) -> Result<Dataset> {
    synth_dataset_with(&DatasetSpec::new(n_per_class, n_features, separation, seed))
}

pub fn synth_dataset_with(spec: &DatasetSpec) -> Result<Dataset> {
    let d = spec.n_features;
    if d < 2 || spec.n_per_class < 1 {
        return Err(invalid("need n_features >= 2 and n_per_class >= 1"));
    }
    if spec.informative.iter().any(|&i| i >= d) || spec.rppg_width > d {
        return Err(invalid("informative index or rppg width out of range"));
    }
    if !spec.separation.is_finite() {
        return Err(invalid("separation must be finite"));
    }
    let mut mask = vec![false; d];
    for &i in &spec.informative {
        mask[i] = true;
    }
    let mut rng = Rng::new(spec.seed);
    let mut vectors = Vec::with_capacity(2 * spec.n_per_class);
    for i in 0..spec.n_per_class {
        for label in 0..2u8 {
            let shift = if label == 1 { 0.5 } else { -0.5 } * spec.separation;
            let values = (0..d).map(|j| rng.normal() + if mask[j] { shift } else { 0.0 }).collect();
            vectors.push(FeatureVector { session_id: format!("syn{i:04}"), label, values });
        }
    }
    Ok(Dataset {
        mode: Mode::EarlyFusion,
        feature_names: (0..d).map(|j| format!("f{j:02}")).collect(),
        rppg_width: spec.rppg_width,
        vectors,
        informative: Some(mask),
    })
}

/// Ground truth of one corpus session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusTruth {
    pub session_id: String,
    pub condition_label: ConditionLabel,
    pub hr_profile: HrProfile,
    pub noise_sigma: f64,
    /// `(roi_id, step °C)` injected at the half-way point.
    pub thermal_steps: Vec<(i64, f64)>,
    pub r_peak_times_s: Vec<f64>,
}

pub const CORPUS_DURATION_S: f64 = 300.0;
pub const CORPUS_FPS: f64 = 30.0;
pub const CORPUS_THERMAL_FPS: f64 = 10.0;
pub const CORPUS_ECG_FS: f64 = 250.0;
pub const CORPUS_PATCHES: usize = 8;

/// RR sequence following `profile` from t = 0 until `duration_s`.
pub fn rr_from_profile(profile: &HrProfile, duration_s: f64) -> Vec<f64> {
    let mut rr = Vec::new();
    let mut t = 0.0;
    loop {
        let r = 60.0 / profile.bpm_at(t);
        if t + r > duration_s {
            break;
        }
        t += r;
        rr.push(r * 1000.0);
    }
    rr
}

/// One session of the bundled corpus: traces, manifest and truth.
pub struct CorpusSession {
    pub manifest: SessionManifest,
    pub rgb: RgbPatchTraceSet,
    pub thermal: ThermalTraceSet,
    pub ecg: EcgTrace,
    pub truth: CorpusTruth,
}

/// The four-session reference corpus (or `n_sessions` of the same kind).
/// All but the last session are stimulated: their HR steps up and the
/// facial temperatures shift at 150 s.
pub fn corpus(n_sessions: usize, seed: u64) -> Result<Vec<CorpusSession>> {
    if n_sessions == 0 {
        return Err(invalid("corpus needs at least one session"));
    }
    let noise_levels = [0.3, 0.6, 1.0, 1.5];
    (0..n_sessions)
        .map(|i| {
            let session_id = format!("session{:02}", i + 1);
            let stimulated = i + 1 < n_sessions || n_sessions == 1;
            let condition_label = if stimulated { ConditionLabel::Stimulated } else { ConditionLabel::Baseline };
            let mut rng = Rng::derive(seed, 1000 + i as u64);
            let rest = 62.0 + 4.0 * i as f64 + rng.uniform(0.0, 2.0);
            let lift = if stimulated { 6.0 + rng.uniform(0.0, 4.0) } else { 0.0 };
            let hr_profile = HrProfile::Modulated {
                base: Box::new(HrProfile::Steps { levels: vec![(0.0, rest), (CORPUS_DURATION_S / 2.0, rest + lift)] }),
                amplitude: 3.0,
                freq_hz: 0.05 + 0.01 * i as f64,
            };
            let noise_sigma = noise_levels[i % noise_levels.len()];
            let spec = SynthSpec {
                seed: seed.wrapping_add(i as u64),
                duration_s: CORPUS_DURATION_S,
                fps: CORPUS_FPS,
                hop_s: 1.0,
                hr_profile: hr_profile.clone(),
                modulation_depth: 0.02,
                noise_sigma,
                n_patches: CORPUS_PATCHES,
            };
            let (rgb, _) = synth_rppg(&spec)?;

            let rois: Vec<(i64, f64, f64)> = SELECTED_ROIS
                .iter()
                .map(|&(id, _)| {
                    let base = 33.0 + rng.uniform(0.0, 2.5);
                    let step = if stimulated { rng.uniform(-0.6, 0.6) } else { 0.0 };
                    // quantized so injected steps survive CSV formatting exactly
                    ((id), (base * 1000.0).round() / 1000.0, (step * 1000.0).round() / 1000.0)
                })
                .collect();
            let thermal = synth_thermal(&ThermalSynthSpec {
                rois: rois.clone(),
                fps: CORPUS_THERMAL_FPS,
                duration_s: CORPUS_DURATION_S,
                drift: 0.0,
                noise_sigma: 0.0,
                seed,
            })?;

            let rr = rr_from_profile(&hr_profile, CORPUS_DURATION_S - 1.0);
            let (mut ecg, r_peak_times_s) = synth_ecg(&rr, CORPUS_ECG_FS)?;
            for v in &mut ecg.samples {
                *v += 0.02 * rng.normal();
            }

            let manifest = SessionManifest {
                session_id: session_id.clone(),
                condition_label,
                rgb_path: PathBuf::from(format!("{session_id}_rgb.csv")),
                thermal_path: PathBuf::from(format!("{session_id}_thermal.csv")),
                ecg_path: Some(PathBuf::from(format!("{session_id}_ecg.csv"))),
            };
            let truth = CorpusTruth {
                session_id,
                condition_label,
                hr_profile,
                noise_sigma,
                thermal_steps: rois.iter().map(|r| (r.0, r.2)).collect(),
                r_peak_times_s,
            };
            Ok(CorpusSession { manifest, rgb, thermal, ecg, truth })
        })
        .collect()
}

/// Writes the corpus under `dir` and returns the manifest paths.
pub fn write_corpus(dir: &Path, n_sessions: usize, seed: u64) -> crate::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| dataio::DataError::Io { path: dir.to_owned(), source })?;
    let mut out = Vec::new();
    for s in corpus(n_sessions, seed)? {
        let m = &s.manifest;
        dataio::write_rgb_traces(&s.rgb, dir.join(&m.rgb_path))?;
        dataio::write_thermal_traces(&s.thermal, dir.join(&m.thermal_path))?;
        if let Some(p) = &m.ecg_path {
            dataio::write_ecg(&s.ecg, dir.join(p))?;
        }
        let manifest_path = dir.join(format!("{}.json", m.session_id));
        write_json(&manifest_path, m)?;
        write_json(&dir.join(format!("{}_truth.json", m.session_id)), &s.truth)?;
        out.push(manifest_path);
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> crate::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|source| dataio::DataError::Io { path: path.to_owned(), source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::power_spectrum;

    #[test]
    fn constant_tone_peak() {
        let spec = SynthSpec { duration_s: 60.0, n_patches: 2, ..Default::default() };
        let (set, truth) = synth_rppg(&spec).unwrap();
        assert_eq!(set.n_frames(), 1800);
        let g: Vec<f64> = set.patches[0].samples.iter().map(|s| s[1]).collect();
        let m = crate::stats::mean(&g);
        let centred: Vec<f64> = g.iter().map(|v| v - m).collect();
        let nfft = 1 << 16;
        let p = power_spectrum(&centred, nfft);
        let k = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let f = k as f64 * 30.0 / nfft as f64;
        assert!((f - 1.2).abs() < 30.0 / nfft as f64, "{f}");
        assert_eq!(truth.len(), 61);
    }

    #[test]
    fn ramp_truth_endpoints() {
        let spec = SynthSpec {
            duration_s: 120.0,
            hr_profile: HrProfile::Ramp { from: 60.0, to: 90.0, start_s: 0.0, end_s: 120.0 },
            n_patches: 1,
            ..Default::default()
        };
        let (_, truth) = synth_rppg(&spec).unwrap();
        assert_eq!(truth.values.first().unwrap(), &Some(60.0));
        assert_eq!(truth.values.last().unwrap(), &Some(90.0));
    }

    #[test]
    fn zero_modulation_is_constant() {
        let spec = SynthSpec { modulation_depth: 0.0, duration_s: 10.0, n_patches: 1, ..Default::default() };
        let (set, _) = synth_rppg(&spec).unwrap();
        let first = set.patches[0].samples[0];
        assert!(set.patches[0].samples.iter().all(|s| *s == first));
    }

    #[test]
    fn spec_validation() {
        let bad = SynthSpec { hr_profile: HrProfile::Constant { bpm: 30.0 }, ..Default::default() };
        assert!(matches!(synth_rppg(&bad), Err(SynthError::InvalidSpec(_))));
        let bad = SynthSpec { noise_sigma: -1.0, ..Default::default() };
        assert!(synth_rppg(&bad).is_err());
    }

    #[test]
    fn same_seed_same_output() {
        let spec = SynthSpec { duration_s: 20.0, noise_sigma: 1.0, ..Default::default() };
        assert_eq!(synth_rppg(&spec).unwrap(), synth_rppg(&spec).unwrap());
    }

    #[test]
    fn ecg_peak_spacing() {
        let (ecg, peaks) = synth_ecg(&[800.0; 10], 250.0).unwrap();
        assert_eq!(peaks.len(), 10);
        assert!(peaks.windows(2).all(|w| (w[1] - w[0] - 0.8).abs() < 1e-12));
        assert_eq!(ecg.samples.len(), 2250);
        let alt: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 750.0 } else { 850.0 }).collect();
        let (_, peaks) = synth_ecg(&alt, 250.0).unwrap();
        for (k, w) in peaks.windows(2).enumerate() {
            assert!((w[1] - w[0] - alt[k + 1] / 1000.0).abs() < 1e-12);
        }
        assert_eq!(synth_ecg(&[100.0], 250.0).unwrap_err(), SynthError::InvalidRr(100.0));
    }

    #[test]
    fn thermal_steps() {
        let spec = ThermalSynthSpec {
            rois: vec![(1, 34.0, 0.5), (2, 34.0, -0.5), (3, 34.0, 0.0)],
            fps: 10.0,
            duration_s: 300.0,
            drift: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        };
        let set = synth_thermal(&spec).unwrap();
        let d = crate::thermal::segment_delta(&set).unwrap();
        assert!((d[&1] - 0.5).abs() < 1e-12 && (d[&2] + 0.5).abs() < 1e-12 && d[&3] == 0.0);
        let m = crate::thermal::relative_matrix(&d);
        assert!((m.values[1][0] - 1.0).abs() < 1e-12);
        let short = ThermalSynthSpec { duration_s: 200.0, ..spec };
        assert_eq!(synth_thermal(&short).unwrap_err(), SynthError::TooShort(200.0));
    }

    #[test]
    fn dataset_shape() {
        let d = synth_dataset(10, 29, 6.0, 1).unwrap();
        assert_eq!((d.len(), d.width(), d.rppg_width), (20, 29, 7));
        assert_eq!(d.informative.as_ref().unwrap().iter().filter(|m| **m).count(), 2);
        assert_eq!(d.class_counts(), [10, 10]);
        assert!(synth_dataset(10, 1, 6.0, 1).is_err());
    }
}
