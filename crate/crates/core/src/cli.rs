//! The `p2p` command line: synth, ingest, train, eval and predict.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal error. `P2P_THREADS` sets the worker thread count.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::AppConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate_all, render_report, summary_json, EvalReport, Fingerprint, ReportFormat};
use crate::fsutil::write_atomic;
use crate::ingest::{adapt_external, heuristic_label, list_track_files, read_track, save_track, TRACK_EXTENSION};
use crate::predictors::{by_name, ModelPredictor, Predictor};
use crate::synth::generate_dataset;
use crate::tokenizer::{final_window, make_dataset, Example, TokenizerConfig};
use crate::track::{BehaviorClass, Track};
use crate::training::{history_csv, split_indices, train};
use crate::transformer::{load_checkpoint, save_checkpoint, ModelConfig};

pub const THREADS_ENV: &str = "P2P_THREADS";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "p2p", version, about = "Track-based trajectory prediction and intercept feasibility")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides one configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    All,
    Train,
    Val,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset.
    Synth {
        /// Output directory for track files and the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a directory of annotations into canonical track files.
    Ingest {
        /// Directory of `.json` external annotations and/or `.jsonl` tracks.
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the model on a directory of track files.
    Train {
        data: Option<PathBuf>,
        /// Checkpoint path; metrics go next to it as `<stem>.metrics.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate predictors and write a report.
    Eval {
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated: frame, track, naive, p2p.
        #[arg(long, value_delimiter = ',', default_value = "frame,track,naive")]
        predictors: Vec<String>,
        #[arg(long, default_value = "md")]
        format: String,
        /// Output directory for `report.<format>` and `report.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Which examples to score; `train`/`val` use the training split.
        #[arg(long, value_enum, default_value = "all")]
        split: Split,
    },
    /// Predict from the last window of one track file.
    Predict {
        track: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write the JSON output to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit code for a library error.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::InvalidSpec(_)
        | Error::UnknownFormat(_)
        | Error::UnknownPredictor(_)
        | Error::CheckpointMissing => 1,
        Error::Track(_)
        | Error::TooShort { .. }
        | Error::EmptySet
        | Error::EmptyDataset
        | Error::Parse { .. }
        | Error::GapTooLarge { .. }
        | Error::Mapping(_)
        | Error::Checkpoint(_)
        | Error::Io { .. } => 2,
        Error::OutOfRange { .. }
        | Error::NegativeDistance(_)
        | Error::ShapeMismatch(_)
        | Error::LengthMismatch { .. }
        | Error::NonFinite(_) => 3,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Output goes to stdout, diagnostics to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return 1;
    }
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn load_config(cli: &Cli) -> Result<AppConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("train.seed={seed}"));
        overrides.push(format!("synth.seed={seed}"));
    }
    AppConfig::load(cli.config.as_deref(), &overrides)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth { out } => {
            let dir = pick(out, &cfg.paths.out_dir, "synth_data");
            let manifest = cmd_synth(&cfg, &dir)?;
            println!(
                "wrote {} tracks ({} drones, {} distractors) to {}",
                manifest.n_tracks,
                manifest.n_drones,
                manifest.n_distractors,
                dir.display()
            );
        }
        Command::Ingest { input, out } => {
            let dir = pick(out, &cfg.paths.out_dir, "ingested");
            let manifest = cmd_ingest(&cfg, input, &dir)?;
            println!("wrote {} tracks to {}", manifest.n_tracks, dir.display());
        }
        Command::Train { data, out } => {
            let data = pick(data, &cfg.paths.data_dir, "synth_data");
            let ckpt = pick(out, &cfg.paths.checkpoint, "model.p2pm");
            let summary = cmd_train(&cfg, &data, &ckpt)?;
            println!(
                "trained on {} examples ({} validation); best epoch {}; checkpoint {}",
                summary.n_train,
                summary.n_val,
                summary.best_epoch.map_or("-".into(), |e| e.to_string()),
                ckpt.display()
            );
        }
        Command::Eval {
            data,
            checkpoint,
            predictors,
            format,
            out,
            split,
        } => {
            let format: ReportFormat = format.parse()?;
            let data = pick(data, &cfg.paths.data_dir, "synth_data");
            let checkpoint = checkpoint.clone().or_else(|| cfg.paths.checkpoint.clone());
            let report = cmd_eval(&cfg, &data, checkpoint.as_deref(), predictors, *split)?;
            let rendered = render_report(&report, format);
            if let Some(dir) = out.as_ref().or(cfg.paths.out_dir.as_ref()) {
                write_atomic(&dir.join(format!("report.{}", format.extension())), rendered.as_bytes())?;
                write_atomic(&dir.join("report.json"), summary_json(&report).as_bytes())?;
            }
            print!("{rendered}");
        }
        Command::Predict {
            track,
            checkpoint,
            out,
        } => {
            let checkpoint = checkpoint
                .clone()
                .or_else(|| cfg.paths.checkpoint.clone())
                .ok_or(Error::CheckpointMissing)?;
            let output = cmd_predict(&cfg, &checkpoint, track)?;
            let mut text = serde_json::to_string_pretty(&output).expect("prediction serializes");
            text.push('\n');
            if let Some(path) = out {
                write_atomic(path, text.as_bytes())?;
            }
            print!("{text}");
        }
    }
    Ok(())
}

fn pick(flag: &Option<PathBuf>, configured: &Option<PathBuf>, fallback: &str) -> PathBuf {
    flag.clone()
        .or_else(|| configured.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn manifest_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("manifest serializes");
    s.push('\n');
    s.into_bytes()
}

/// Per-class tallies keyed by behavior name, plus `distractor`.
fn tallies(tracks: &[Track]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for t in tracks {
        let key = match t.labels {
            Some(l) if !l.is_drone => "distractor".to_string(),
            Some(l) => l.behavior.name().to_string(),
            None => "unlabeled".to_string(),
        };
        *out.entry(key).or_insert(0) += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetManifest {
    pub seed: Option<u64>,
    pub n_tracks: usize,
    pub n_drones: usize,
    pub n_distractors: usize,
    pub per_class: BTreeMap<String, usize>,
    pub files: Vec<String>,
    pub config_hash: String,
}

fn write_tracks(tracks: &[Track], dir: &Path, seed: Option<u64>, cfg: &AppConfig) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let files: Vec<String> = tracks
        .iter()
        .map(|t| format!("{}.{TRACK_EXTENSION}", t.id))
        .collect();
    tracks
        .par_iter()
        .zip(&files)
        .try_for_each(|(t, name)| save_track(&dir.join(name), t))?;
    let is_drone = |t: &&Track| t.labels.is_some_and(|l| l.is_drone);
    let n_drones = tracks.iter().filter(is_drone).count();
    let n_distractors = tracks
        .iter()
        .filter(|t| t.labels.is_some_and(|l| !l.is_drone))
        .count();
    let manifest = DatasetManifest {
        seed,
        n_tracks: tracks.len(),
        n_drones,
        n_distractors,
        per_class: tallies(tracks),
        files,
        config_hash: cfg.hash(),
    };
    write_atomic(&dir.join(MANIFEST), &manifest_bytes(&manifest))?;
    Ok(manifest)
}

pub fn cmd_synth(cfg: &AppConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let tracks = generate_dataset(&cfg.synth)?;
    write_tracks(&tracks, out_dir, Some(cfg.synth.seed), cfg)
}

/// Reads `.jsonl` canonical tracks and `.json` external annotations from
/// `input`, labels unlabeled ones when configured, and writes canonical files.
pub fn cmd_ingest(cfg: &AppConfig, input: &Path, out_dir: &Path) -> Result<DatasetManifest> {
    let entries = std::fs::read_dir(input).map_err(|e| Error::io(format!("listing {}", input.display()), e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(format!("listing {}", input.display()), e))?.path();
        let is_input = path.is_file()
            && path.extension().is_some_and(|e| e == "json" || e == TRACK_EXTENSION)
            && path.file_name().is_some_and(|n| n != MANIFEST);
        if is_input {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ingest = &cfg.ingest;
    let tracks = paths
        .par_iter()
        .map(|path| {
            let mut track = if path.extension().is_some_and(|e| e == TRACK_EXTENSION) {
                read_track(path, ingest.max_gap)?
            } else {
                adapt_external(path, &ingest.mapping, ingest.max_gap)?
            };
            if track.labels.is_none() && ingest.label_unlabeled {
                track.labels = Some(heuristic_label(&track, &cfg.labeler));
            }
            Ok(track)
        })
        .collect::<Result<Vec<_>>>()?;
    write_tracks(&tracks, out_dir, None, cfg)
}

/// Every canonical track in `dir`, in file-name order.
pub fn load_tracks(dir: &Path, max_gap: u64) -> Result<Vec<Track>> {
    let files = list_track_files(dir)?;
    files.par_iter().map(|f| read_track(f, max_gap)).collect()
}

fn load_examples(cfg: &AppConfig, dir: &Path) -> Result<Vec<Example>> {
    let tracks = load_tracks(dir, cfg.ingest.max_gap)?;
    make_dataset(&tracks, &cfg.tokenizer)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub n_train: usize,
    pub n_val: usize,
    pub best_epoch: Option<usize>,
    pub metrics_path: PathBuf,
}

/// Path of the metrics CSV written next to a checkpoint.
pub fn metrics_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("metrics.csv")
}

pub fn cmd_train(cfg: &AppConfig, data_dir: &Path, checkpoint: &Path) -> Result<TrainSummary> {
    let examples = load_examples(cfg, data_dir)?;
    let model = cfg.model_config();
    let outcome = train(&examples, &model, &cfg.train, &cfg.isr_settings())?;
    save_checkpoint(checkpoint, &model, &outcome.best)?;
    let metrics = metrics_path(checkpoint);
    write_atomic(&metrics, history_csv(&outcome.history).as_bytes())?;
    Ok(TrainSummary {
        n_train: outcome.train_indices.len(),
        n_val: outcome.val_indices.len(),
        best_epoch: outcome.best_epoch,
        metrics_path: metrics,
    })
}

fn load_model(path: &Path) -> Result<ModelPredictor> {
    let (config, params) = load_checkpoint(path)?;
    Ok(ModelPredictor::new(config, params))
}

fn check_compatible(model: &ModelConfig, tokenizer: &TokenizerConfig) -> Result<()> {
    if model.window != tokenizer.window || model.horizon != tokenizer.horizon {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint expects window {} / horizon {}, tokenizer is configured for {} / {}",
            model.window, model.horizon, tokenizer.window, tokenizer.horizon
        )));
    }
    Ok(())
}

pub fn fingerprint(cfg: &AppConfig) -> Fingerprint {
    let mut fp = Fingerprint::from_settings(&cfg.isr_settings());
    fp.seeds.insert("synth".into(), cfg.synth.seed);
    fp.seeds.insert("train".into(), cfg.train.seed);
    fp.config_hash = Some(cfg.hash());
    fp
}

pub fn cmd_eval(
    cfg: &AppConfig,
    data_dir: &Path,
    checkpoint: Option<&Path>,
    predictors: &[String],
    split: Split,
) -> Result<EvalReport> {
    let names: Vec<&str> = predictors
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect();
    if names.is_empty() {
        return Err(Error::InvalidSpec("no predictors requested".into()));
    }
    let model = if names.contains(&"p2p") {
        let path = checkpoint.ok_or(Error::CheckpointMissing)?;
        let model = load_model(path)?;
        check_compatible(&model.config, &cfg.tokenizer)?;
        Some(model)
    } else {
        None
    };
    let boxed = names
        .iter()
        .map(|n| by_name(n, model.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut examples = load_examples(cfg, data_dir)?;
    if split != Split::All {
        let (train_idx, val_idx) = split_indices(&examples, &cfg.train);
        let keep = if split == Split::Train { train_idx } else { val_idx };
        examples = keep.into_iter().map(|i| examples[i].clone()).collect();
    }
    let refs: Vec<&dyn Predictor> = boxed.iter().map(|b| b.as_ref()).collect();
    evaluate_all(&refs, &examples, &cfg.isr_settings(), fingerprint(cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictOutput {
    pub track_id: String,
    /// Frame number of the last observed frame.
    pub frame: u64,
    pub drone_prob: f64,
    pub behavior: String,
    pub behavior_probs: BTreeMap<String, f64>,
    pub intent: f64,
    /// Absolute predicted centers for the next `horizon` frames.
    pub positions: Vec<[f64; 2]>,
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

pub fn cmd_predict(cfg: &AppConfig, checkpoint: &Path, track_file: &Path) -> Result<PredictOutput> {
    let model = load_model(checkpoint)?;
    let track = read_track(track_file, cfg.ingest.max_gap)?;
    let tokenizer = TokenizerConfig {
        window: model.config.window,
        horizon: model.config.horizon,
        ..cfg.tokenizer.clone()
    };
    let example = final_window(&track, &tokenizer)?;
    let p = model.predict(&example)?;
    Ok(PredictOutput {
        track_id: track.id,
        frame: example.t_index,
        drone_prob: round6(p.drone_prob),
        behavior: p.behavior().name().to_string(),
        behavior_probs: BehaviorClass::ALL
            .iter()
            .map(|b| (b.name().to_string(), round6(p.behavior_probs[b.index()])))
            .collect(),
        intent: round6(p.intent),
        positions: p.positions.iter().map(|q| [round6(q.x), round6(q.y)]).collect(),
    })
}
