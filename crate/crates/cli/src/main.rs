use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use vitalsig_core::dataio::{self, ConditionLabel};
use vitalsig_core::ecgref::{self, AgreementPair};
use vitalsig_core::hrv::{self, Segment};
use vitalsig_core::ml::{
    self, default_grid, grid_search_cv, train_late_fusion, Dataset, Mode, ModelKind, TrainedModel,
};
use vitalsig_core::pipeline::{self, PipelineConfig, PipelineReport};
use vitalsig_core::rng::Rng;
use vitalsig_core::rppg::{self, HrEstimator, HrSeries};
use vitalsig_core::synthgen::{self, HrProfile, SynthSpec, ThermalSynthSpec};
use vitalsig_core::thermal;

#[derive(Parser)]
#[command(name = "vitalsig", version, about = "Contactless vital-sign and thermal feature pipeline")]
struct Cli {
    /// PipelineConfig JSON; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Rppg,
    Ecg,
    Thermal,
    Dataset,
    Corpus,
}

#[derive(Clone, Copy, ValueEnum)]
enum SegmentArg {
    First120,
    Last120,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Rppg,
    Thermal,
    Early,
    Late,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Rf,
    Svm,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Rf => ModelKind::Rf,
            ModelArg::Svm => ModelKind::Svm,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic data plus a ground-truth sidecar into --out DIR.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long, default_value_t = 300.0)]
        duration: f64,
        #[arg(long, default_value_t = 72.0)]
        bpm: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 100)]
        beats: usize,
        #[arg(long, default_value_t = 4)]
        sessions: usize,
        #[arg(long, default_value_t = 100)]
        n_per_class: usize,
        #[arg(long, default_value_t = 29)]
        features: usize,
        #[arg(long, default_value_t = 6.0)]
        separation: f64,
    },
    /// RGB patch traces to a cleaned heart-rate series with its quality index.
    Rppg {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// HRV metrics of one segment of a heart-rate series.
    Hrv {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        segment: SegmentArg,
    },
    /// r-PPG vs ECG agreement across quality thresholds.
    Agree {
        #[arg(long)]
        pairs: PathBuf,
        /// `lo:hi:step`
        #[arg(long, default_value = "0.30:0.48:0.02")]
        thresholds: String,
        /// Correlate last-minus-first session deltas.
        #[arg(long)]
        delta: bool,
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
    },
    /// Segment deltas and forehead-relative deltas per ROI.
    Thermal {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Grid-search a classifier with session-grouped cross-validation.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Rank features by mean absolute Shapley value.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 2000)]
        permutations: usize,
    },
    /// Full pipeline over session manifests (files or directories).
    Run {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
    },
    /// Rewrite the CSV tables of an existing report.json.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_thresholds(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec.split(':').map(str::parse).collect::<Result<_, _>>().context("thresholds")?;
    match parts[..] {
        [single] => Ok(vec![single]),
        [lo, hi, step] => {
            let t = pipeline::threshold_range(lo, hi, step);
            if t.is_empty() {
                bail!("empty threshold range {spec}");
            }
            Ok(t)
        }
        _ => bail!("thresholds must be lo:hi:step or a single value"),
    }
}

/// `.json` files under `dir` that are not ground-truth sidecars.
fn manifests_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && !p.file_stem().is_some_and(|s| s.to_string_lossy().ends_with("_truth"))
        })
        .collect();
    found.sort();
    Ok(found)
}

#[derive(Serialize)]
struct HrOutput<'a> {
    #[serde(flatten)]
    hr: &'a HrSeries,
    quality: Option<f64>,
}

#[derive(Serialize)]
struct RppgTruth {
    spec: SynthSpec,
    truth: HrSeries,
}

#[derive(Serialize)]
struct EcgTruth {
    rr_ms: Vec<f64>,
    r_peak_times_s: Vec<f64>,
}

struct Ctx {
    cfg: PipelineConfig,
    out: Option<PathBuf>,
}

impl Ctx {
    fn out(&self) -> Result<&Path> {
        self.out.as_deref().context("--out is required for this subcommand")
    }
}

fn synth(ctx: &Ctx, kind: SynthKind, cmd: &Command) -> Result<()> {
    let Command::Synth { duration, bpm, noise, beats, sessions, n_per_class, features, separation, .. } = *cmd else {
        unreachable!()
    };
    let dir = ctx.out()?;
    fs::create_dir_all(dir)?;
    let seed = ctx.cfg.seed;
    match kind {
        SynthKind::Rppg => {
            let spec = SynthSpec {
                seed,
                duration_s: duration,
                hr_profile: HrProfile::Constant { bpm },
                noise_sigma: noise,
                ..Default::default()
            };
            let (set, truth) = synthgen::synth_rppg(&spec)?;
            dataio::write_rgb_traces(&set, dir.join("rgb.csv"))?;
            write_json(&dir.join("rgb_truth.json"), &RppgTruth { spec, truth })?;
        }
        SynthKind::Ecg => {
            let mut rng = Rng::new(seed);
            let rr_ms: Vec<f64> = (0..beats).map(|_| rng.uniform(600.0, 1200.0)).collect();
            let (ecg, peaks) = synthgen::synth_ecg(&rr_ms, synthgen::CORPUS_ECG_FS)?;
            dataio::write_ecg(&ecg, dir.join("ecg.csv"))?;
            write_json(&dir.join("ecg_truth.json"), &EcgTruth { rr_ms, r_peak_times_s: peaks })?;
        }
        SynthKind::Thermal => {
            let mut rng = Rng::new(seed);
            let rois = thermal::selected_roi_ids()
                .into_iter()
                .map(|id| (id, rng.uniform(33.0, 35.5), rng.uniform(-0.6, 0.6)))
                .collect();
            let spec = ThermalSynthSpec {
                rois,
                fps: synthgen::CORPUS_THERMAL_FPS,
                duration_s: duration,
                drift: 0.0,
                noise_sigma: noise,
                seed,
            };
            dataio::write_thermal_traces(&synthgen::synth_thermal(&spec)?, dir.join("thermal.csv"))?;
            write_json(&dir.join("thermal_truth.json"), &spec)?;
        }
        SynthKind::Dataset => {
            let data = synthgen::synth_dataset(n_per_class, features, separation, seed)?;
            write_json(&dir.join("dataset.json"), &data)?;
        }
        SynthKind::Corpus => {
            let written = synthgen::write_corpus(dir, sessions, seed)?;
            log::info!("wrote {} manifests", written.len());
        }
    }
    Ok(())
}

fn train(ctx: &Ctx, dataset: &Path, mode: ModeArg, model: ModelArg, report: Option<&Path>) -> Result<()> {
    let data: Dataset = read_json(dataset)?;
    let kind = ModelKind::from(model);
    let seed = ctx.cfg.seed;
    let (rep, trained) = match mode {
        ModeArg::Late => {
            let k = pipeline::effective_folds(&data, ctx.cfg.cv_folds);
            let (trained, rep, _) = train_late_fusion(&data, kind, k, seed)?;
            (rep, trained)
        }
        _ => {
            let mode = match mode {
                ModeArg::Rppg => Mode::Rppg,
                ModeArg::Thermal => Mode::Thermal,
                _ => Mode::EarlyFusion,
            };
            let block = data.block(mode)?;
            let k = pipeline::effective_folds(&block, ctx.cfg.cv_folds);
            grid_search_cv(&block, &default_grid(kind, block.width(), seed), k, seed)?
        }
    };
    println!("{} {} avg_accuracy {:.4} avg_f1 {:.4}", rep.mode, rep.model, rep.avg_accuracy, rep.avg_f1);
    write_json(ctx.out()?, &trained)?;
    if let Some(path) = report {
        write_json(path, &rep)?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<ExitCode> {
    let mut cfg: PipelineConfig = match &cli.config {
        Some(path) => read_json(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Err(msg) = cfg.validate() {
        bail!("invalid config: {msg}");
    }
    let ctx = Ctx { cfg, out: cli.out };
    match &cli.command {
        Command::Synth { kind, .. } => synth(&ctx, *kind, &cli.command)?,
        Command::Rppg { input } => {
            let set = dataio::load_rgb_traces(input)?;
            let est = HrEstimator {
                window_s: ctx.cfg.window_s,
                hop_s: ctx.cfg.hop_s,
                min_peak_ratio: ctx.cfg.min_peak_ratio,
            };
            let hr = rppg::estimate_hr_with(&rppg::pos_bvp(&set)?, &est)?;
            let hr = rppg::clean_hr(&hr, ctx.cfg.jump_bpm)?;
            let quality = rppg::quality_index(&hr).ok().map(|q| q.mae_over_hr);
            write_json(ctx.out()?, &HrOutput { hr: &hr, quality })?;
        }
        Command::Hrv { input, segment } => {
            let hr: HrSeries = read_json(input)?;
            let seg = match segment {
                SegmentArg::First120 => Segment::first(ctx.cfg.segment_s),
                SegmentArg::Last120 => Segment::last(hr.duration_s, ctx.cfg.segment_s),
            };
            let metrics = hrv::segment_metrics_with(&hr, seg, &ctx.cfg.hrv_limits)?;
            write_json(ctx.out()?, &metrics)?;
        }
        Command::Agree { pairs, thresholds, delta, exclude } => {
            let mut pairs: Vec<AgreementPair> = read_json(pairs)?;
            pairs.retain(|p| !exclude.contains(&p.session_id));
            if *delta {
                pairs = ecgref::session_deltas(&pairs);
            }
            let mut rows = Vec::new();
            for t in parse_thresholds(thresholds)? {
                match ecgref::agreement_at(&pairs, t) {
                    Ok(row) => rows.push(row),
                    Err(e) => log::warn!("{e}"),
                }
            }
            write_text(ctx.out()?, &pipeline::agreement_csv(&rows))?;
        }
        Command::Thermal { input } => {
            let traces = dataio::load_thermal_traces(input)?;
            let features = thermal::thermal_features(&traces, ctx.cfg.forehead_roi)?;
            write_json(ctx.out()?, &features.to_flat_map())?;
        }
        Command::Train { dataset, mode, model, report } => train(&ctx, dataset, *mode, *model, report.as_deref())?,
        Command::Explain { model, dataset, permutations } => {
            let model: TrainedModel = read_json(model)?;
            let data: Dataset = read_json(dataset)?;
            let data = match model.mode {
                Mode::EarlyFusion => data,
                m => data.block(m)?,
            };
            if data.width() != model.width() {
                return Err(ml::MlError::WidthMismatch { expected: model.width(), got: data.width() }.into());
            }
            let ranked = pipeline::feature_importance(&model, &data, *permutations, ctx.cfg.seed)?;
            write_json(ctx.out()?, &ranked)?;
        }
        Command::Run { manifests } => {
            let mut paths = Vec::new();
            for p in manifests {
                if p.is_dir() {
                    paths.extend(manifests_in(p)?);
                } else {
                    paths.push(p.clone());
                }
            }
            let (loaded, load_errors) = pipeline::load_manifests(&paths);
            let mut report = pipeline::run_pipeline(&loaded, &ctx.cfg);
            report.errors.splice(0..0, load_errors);
            let files = pipeline::write_report(&report, ctx.out()?)?;
            log::info!("wrote {}", files.join(", "));
            summarize(&report);
            return Ok(exit_code(&report, paths.len()));
        }
        Command::Report { input } => {
            let report: PipelineReport = read_json(input)?;
            pipeline::write_report(&report, ctx.out()?)?;
            summarize(&report);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(report: &PipelineReport, n_inputs: usize) -> ExitCode {
    let mut code = report.status().exit_code();
    // a manifest that failed to load counts as a failed session
    if code == 0 && report.sessions.len() < n_inputs {
        code = 2;
    }
    ExitCode::from(code as u8)
}

fn summarize(report: &PipelineReport) {
    let stimulated = report.sessions.iter().filter(|s| s.condition_label == ConditionLabel::Stimulated).count();
    println!(
        "sessions {} ({stimulated} stimulated), excluded {}, models {}, errors {}",
        report.sessions.len(),
        report.excluded.len(),
        report.models.len(),
        report.errors.len()
    );
    let mut table: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for m in &report.models {
        table.insert((m.mode.as_str(), m.model.as_str()), m.avg_accuracy);
    }
    for ((mode, model), acc) in table {
        println!("  {mode:<12} {model:<4} {acc:.3}");
    }
    for e in &report.errors {
        println!("  error [{}] {}: {}", e.session_id.as_deref().unwrap_or("-"), e.stage, e.message);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VITALSIG_LOG", "warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
