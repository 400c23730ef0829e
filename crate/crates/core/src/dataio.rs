//! Trace file formats.
//!
//! RGB patch traces:
//!
//! ```text
//! # fps=30
//! frame_index,patch_id,r_mean,g_mean,b_mean
//! 0,1,0.5412,0.4321,0.3890
//! ```
//!
//! Thermal ROI traces use `frame_index,roi_id,temp_c` under the same
//! `# fps=` header. ECG traces are `time_s,value` with the sampling rate
//! inferred from the timestamps. Writers emit rows sorted by
//! `(frame_index, id)` with shortest round-trip float formatting, so
//! `write(load(x)) == x` for files in that canonical form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

const RGB_COLUMNS: &str = "frame_index,patch_id,r_mean,g_mean,b_mean";
const THERMAL_COLUMNS: &str = "frame_index,roi_id,temp_c";
const ECG_COLUMNS: &str = "time_s,value";

/// Longest run of missing thermal frames that is bridged by interpolation.
pub const MAX_THERMAL_GAP_S: f64 = 2.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("patch {patch_id} has {found} samples, expected {expected}")]
    InconsistentPatchLength { patch_id: i64, expected: usize, found: usize },
    #[error("fps must be positive, got {0}")]
    NonPositiveFps(f64),
    #[error("missing `# fps=<float>` header")]
    MissingFps,
    #[error("patch {patch_id} appears twice in frame {frame}")]
    DuplicatePatch { frame: i64, patch_id: i64 },
    #[error("roi {roi_id} appears twice in frame {frame}")]
    DuplicateRoi { frame: i64, roi_id: i64 },
    #[error("time does not increase at line {line}")]
    NonMonotoneTime { line: usize },
    #[error("sampling interval varies by more than 1% (step {step} s vs median {median} s)")]
    IrregularSampling { step: f64, median: f64 },
    #[error("trace has no samples")]
    EmptyTrace,
    #[error("manifest {path}: {reason}")]
    InvalidManifest { path: PathBuf, reason: String },
}

type Result<T> = std::result::Result<T, DataError>;

/// Mean RGB of one facial patch per frame, normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchTrace {
    pub patch_id: i64,
    pub samples: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbPatchTraceSet {
    pub fps: f64,
    /// Sorted by `patch_id`; every patch has the same number of samples.
    pub patches: Vec<PatchTrace>,
}

impl RgbPatchTraceSet {
    pub fn n_frames(&self) -> usize {
        self.patches.first().map_or(0, |p| p.samples.len())
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames() as f64 / self.fps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiTrace {
    pub roi_id: i64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalTraceSet {
    pub fps: f64,
    /// Sorted by `roi_id`; every ROI has the same number of samples.
    pub rois: Vec<RoiTrace>,
    /// ROIs dropped at load time because of gaps longer than
    /// [`MAX_THERMAL_GAP_S`].
    #[serde(default)]
    pub invalid_rois: Vec<i64>,
}

impl ThermalTraceSet {
    pub fn n_frames(&self) -> usize {
        self.rois.first().map_or(0, |r| r.samples.len())
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames() as f64 / self.fps
    }

    pub fn roi(&self, roi_id: i64) -> Option<&RoiTrace> {
        self.rois.iter().find(|r| r.roi_id == roi_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgTrace {
    pub fs: f64,
    /// Timestamp of the first sample.
    #[serde(default)]
    pub t0: f64,
    pub samples: Vec<f64>,
}

impl EcgTrace {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionLabel {
    Baseline,
    Stimulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub session_id: String,
    pub condition_label: ConditionLabel,
    pub rgb_path: PathBuf,
    pub thermal_path: PathBuf,
    pub ecg_path: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_owned(), source })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| DataError::Io { path: path.to_owned(), source })
}

/// Data rows of a framed CSV plus the declared fps.
struct FramedCsv {
    fps: f64,
    rows: Vec<(usize, Vec<f64>)>,
}

fn parse_framed(text: &str, columns: &str) -> Result<FramedCsv> {
    let width = columns.split(',').count();
    let mut fps = None;
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(value) = comment.trim().strip_prefix("fps=") {
                let v: f64 = value.trim().parse().map_err(|_| DataError::MalformedRow {
                    line: line_no,
                    reason: format!("bad fps value `{value}`"),
                })?;
                if !(v > 0.0) || !v.is_finite() {
                    return Err(DataError::NonPositiveFps(v));
                }
                fps = Some(v);
            }
            continue;
        }
        if line == columns {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(DataError::MalformedRow {
                line: line_no,
                reason: format!("expected {width} columns, found {}", fields.len()),
            });
        }
        let values = fields
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| DataError::MalformedRow { line: line_no, reason: e.to_string() })?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DataError::MalformedRow { line: line_no, reason: "non-finite value".into() });
        }
        rows.push((line_no, values));
    }
    let fps = fps.ok_or(DataError::MissingFps)?;
    Ok(FramedCsv { fps, rows })
}

fn integer(value: f64, line: usize, what: &str) -> Result<i64> {
    if value.fract() != 0.0 {
        return Err(DataError::MalformedRow { line, reason: format!("{what} must be an integer, got {value}") });
    }
    Ok(value as i64)
}

pub fn parse_rgb_traces(text: &str) -> Result<RgbPatchTraceSet> {
    let csv = parse_framed(text, RGB_COLUMNS)?;
    let mut by_patch: BTreeMap<i64, BTreeMap<i64, [f64; 3]>> = BTreeMap::new();
    for (line, v) in &csv.rows {
        let frame = integer(v[0], *line, "frame_index")?;
        let patch_id = integer(v[1], *line, "patch_id")?;
        let frames = by_patch.entry(patch_id).or_default();
        if frames.insert(frame, [v[2], v[3], v[4]]).is_some() {
            return Err(DataError::DuplicatePatch { frame, patch_id });
        }
    }
    if by_patch.is_empty() {
        return Err(DataError::EmptyTrace);
    }
    let reference: Vec<i64> =
        by_patch.values().max_by_key(|f| f.len()).map(|f| f.keys().copied().collect()).unwrap_or_default();
    for (&patch_id, frames) in &by_patch {
        if frames.len() != reference.len() || !frames.keys().eq(reference.iter()) {
            return Err(DataError::InconsistentPatchLength {
                patch_id,
                expected: reference.len(),
                found: frames.len(),
            });
        }
    }
    let max = by_patch
        .values()
        .flat_map(|f| f.values())
        .flat_map(|rgb| rgb.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    // Values up to 1.5 are taken as already normalized.
    let scale = if max <= 1.5 { 1.0 } else { 1.0 / 255.0 };
    let patches = by_patch
        .into_iter()
        .map(|(patch_id, frames)| PatchTrace {
            patch_id,
            samples: frames.into_values().map(|[r, g, b]| [r * scale, g * scale, b * scale]).collect(),
        })
        .collect();
    Ok(RgbPatchTraceSet { fps: csv.fps, patches })
}

pub fn load_rgb_traces(path: impl AsRef<Path>) -> Result<RgbPatchTraceSet> {
    parse_rgb_traces(&read(path.as_ref())?)
}

pub fn format_rgb_traces(set: &RgbPatchTraceSet) -> String {
    let mut out = String::with_capacity(set.n_frames() * set.patches.len() * 40);
    let _ = writeln!(out, "# fps={}", set.fps);
    let _ = writeln!(out, "{RGB_COLUMNS}");
    for frame in 0..set.n_frames() {
        for p in &set.patches {
            let [r, g, b] = p.samples[frame];
            let _ = writeln!(out, "{frame},{},{r},{g},{b}", p.patch_id);
        }
    }
    out
}

pub fn write_rgb_traces(set: &RgbPatchTraceSet, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &format_rgb_traces(set))
}

pub fn parse_thermal_traces(text: &str) -> Result<ThermalTraceSet> {
    let csv = parse_framed(text, THERMAL_COLUMNS)?;
    let mut by_roi: BTreeMap<i64, BTreeMap<i64, f64>> = BTreeMap::new();
    for (line, v) in &csv.rows {
        let frame = integer(v[0], *line, "frame_index")?;
        let roi_id = integer(v[1], *line, "roi_id")?;
        if by_roi.entry(roi_id).or_default().insert(frame, v[2]).is_some() {
            return Err(DataError::DuplicateRoi { frame, roi_id });
        }
    }
    let (Some(first), Some(last)) = (
        by_roi.values().filter_map(|f| f.keys().next()).min().copied(),
        by_roi.values().filter_map(|f| f.keys().last()).max().copied(),
    ) else {
        return Err(DataError::EmptyTrace);
    };
    let n = (last - first + 1) as usize;
    let max_gap = (MAX_THERMAL_GAP_S * csv.fps).round() as usize;
    let mut rois = Vec::new();
    let mut invalid_rois = Vec::new();
    for (roi_id, frames) in by_roi {
        let known: Vec<(usize, f64)> = frames.into_iter().map(|(f, t)| ((f - first) as usize, t)).collect();
        match fill_gaps(&known, n, max_gap) {
            Some(samples) => rois.push(RoiTrace { roi_id, samples }),
            None => {
                log::warn!("thermal roi {roi_id} has a gap longer than {MAX_THERMAL_GAP_S} s; dropped");
                invalid_rois.push(roi_id);
            }
        }
    }
    Ok(ThermalTraceSet { fps: csv.fps, rois, invalid_rois })
}

/// Linear interpolation across missing frames; edges hold the nearest
/// sample. `None` when any run of missing frames exceeds `max_gap`.
fn fill_gaps(known: &[(usize, f64)], n: usize, max_gap: usize) -> Option<Vec<f64>> {
    let (&(first_idx, first_val), &(last_idx, last_val)) = (known.first()?, known.last()?);
    if first_idx > max_gap || n - 1 - last_idx > max_gap {
        return None;
    }
    let mut out = vec![first_val; n];
    for w in known.windows(2) {
        let ((i0, v0), (i1, v1)) = (w[0], w[1]);
        if i1 - i0 - 1 > max_gap {
            return None;
        }
        for (k, slot) in out[i0..i1].iter_mut().enumerate() {
            *slot = v0 + (v1 - v0) * k as f64 / (i1 - i0) as f64;
        }
    }
    out[last_idx..].fill(last_val);
    Some(out)
}

pub fn load_thermal_traces(path: impl AsRef<Path>) -> Result<ThermalTraceSet> {
    parse_thermal_traces(&read(path.as_ref())?)
}

pub fn format_thermal_traces(set: &ThermalTraceSet) -> String {
    let mut out = String::with_capacity(set.n_frames() * set.rois.len() * 24);
    let _ = writeln!(out, "# fps={}", set.fps);
    let _ = writeln!(out, "{THERMAL_COLUMNS}");
    for frame in 0..set.n_frames() {
        for r in &set.rois {
            let _ = writeln!(out, "{frame},{},{}", r.roi_id, r.samples[frame]);
        }
    }
    out
}

pub fn write_thermal_traces(set: &ThermalTraceSet, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &format_thermal_traces(set))
}

pub fn parse_ecg(text: &str) -> Result<EcgTrace> {
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line == ECG_COLUMNS {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(DataError::MalformedRow {
                line: line_no,
                reason: format!("expected 2 columns, found {}", fields.len()),
            });
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::MalformedRow { line: line_no, reason: format!("bad number `{s}`") })
        };
        let t = parse(fields[0])?;
        if times.last().is_some_and(|&prev| t <= prev) {
            return Err(DataError::NonMonotoneTime { line: line_no });
        }
        times.push(t);
        samples.push(parse(fields[1])?);
    }
    if samples.len() < 2 {
        return Err(DataError::EmptyTrace);
    }
    let mut steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sorted = steps.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    if let Some(bad) = steps.drain(..).find(|s| ((s - median) / median).abs() > 0.01) {
        return Err(DataError::IrregularSampling { step: bad, median });
    }
    // Rounded to 1 µHz so that `1 / 0.004` reads back as exactly 250.
    let fs = ((1.0 / median) * 1e6).round() / 1e6;
    Ok(EcgTrace { fs, t0: times[0], samples })
}

pub fn load_ecg(path: impl AsRef<Path>) -> Result<EcgTrace> {
    parse_ecg(&read(path.as_ref())?)
}

pub fn format_ecg(trace: &EcgTrace) -> String {
    let mut out = String::with_capacity(trace.samples.len() * 24);
    let _ = writeln!(out, "{ECG_COLUMNS}");
    for (i, v) in trace.samples.iter().enumerate() {
        let _ = writeln!(out, "{},{v}", trace.t0 + i as f64 / trace.fs);
    }
    out
}

pub fn write_ecg(trace: &EcgTrace, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &format_ecg(trace))
}

/// Reads a manifest and resolves relative trace paths against the
/// manifest's own directory. Referenced files must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<SessionManifest> {
    let path = path.as_ref();
    let invalid = |reason: String| DataError::InvalidManifest { path: path.to_owned(), reason };
    let mut manifest: SessionManifest = serde_json::from_str(&read(path)?).map_err(|e| invalid(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| {
        if p.is_relative() {
            base.join(p)
        } else {
            p.to_owned()
        }
    };
    manifest.rgb_path = resolve(&manifest.rgb_path);
    manifest.thermal_path = resolve(&manifest.thermal_path);
    manifest.ecg_path = manifest.ecg_path.as_deref().map(resolve);
    for p in [Some(&manifest.rgb_path), Some(&manifest.thermal_path), manifest.ecg_path.as_ref()].into_iter().flatten()
    {
        if !p.is_file() {
            return Err(invalid(format!("missing file {}", p.display())));
        }
    }
    Ok(manifest)
}
