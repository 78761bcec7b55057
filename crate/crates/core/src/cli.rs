//! Command-line front end.
//!
//! Output layout for `train` and `sweep`:
//!
//! ```text
//! <out>/<method>-seed<S>/          one run directory per (method, seed)
//!     config.toml                  resolved experiment config
//!     run.json                     seeds, version, init scheme, benchmark
//!     summary.csv                  final row per target plus their mean
//!     target<T>/
//!         info.json                method, seed, target, benchmark
//!         metrics.csv  steps.csv
//!         checkpoints/last.ckpt    model + momentum after the last epoch
//! <out>/report.csv  report.txt     sweep only
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSection, ExperimentConfig};
use crate::data::{split_for_target, write_dataset, MultiDomainDataset, Sample};
use crate::error::{Error, Result};
use crate::metrics::{
    export_embeddings, read_metrics, report, write_metrics, EpochRow, Report, RunInfo, RunMetrics, METRICS_HEADER,
};
use crate::model::{read_checkpoint, write_checkpoint, Checkpoint, InitScheme};
use crate::trainer::{benchmark_id, fit_with, EpochEnd, FitOptions, Regularizer, ResumeState, TrainConfig};

/// Overrides the root that relative output directories resolve against.
pub const OUTPUT_ROOT_ENV: &str = "FIXCLR_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "fixclr", version, about = "Semi-supervised domain generalization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic dataset described by a config.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        /// Output file (default: <output_dir>/dataset.txt).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Train one or all leave-one-domain-out splits.
    Train(TrainArgs),
    /// Train every (method, seed, target) listed in the config's [sweep].
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent runs (each run stays single-threaded).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        overwrite: bool,
    },
    /// Dump projected embeddings of a dataset under a checkpoint.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pseudo-label threshold; rows below it get -1.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Compare run directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Target domain index or `all`.
    #[arg(long, default_value = "all")]
    pub target: String,
    /// Overrides both the split and the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from the last checkpoint of each target.
    #[arg(long, conflicts_with = "overwrite")]
    pub resume: bool,
    #[arg(long)]
    pub overwrite: bool,
    /// Stop each target after this many epochs in this invocation; the
    /// schedule still spans the configured epochs, so `--resume` continues it.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

/// Contents of `run.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub method: Regularizer,
    pub train_seed: u64,
    pub split_seed: u64,
    pub dataset_seed: Option<u64>,
    pub init: InitScheme,
    pub benchmark: String,
    pub targets: Vec<usize>,
    pub config: ExperimentConfig,
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenerateData { config, out, overwrite } => {
            let cfg = ExperimentConfig::load(&config)?;
            let DatasetSection::Synthetic(_) = &cfg.dataset else {
                return Err(Error::Config("generate-data needs a synthetic [dataset] section".into()));
            };
            let path = out.unwrap_or_else(|| output_dir(&cfg, None).join("dataset.txt"));
            if path.exists() && !overwrite {
                return Err(Error::Config(format!("{} exists; pass --overwrite to replace it", path.display())));
            }
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            write_dataset(&cfg.load_dataset()?, &path)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Train(args) => cmd_train(&args),
        Command::Sweep { config, out, jobs, overwrite } => {
            let cfg = ExperimentConfig::load(&config)?;
            let r = cmd_sweep(&cfg, &output_dir(&cfg, out.as_deref()), jobs, overwrite)?;
            print!("{}", r.to_text());
            Ok(())
        }
        Command::ExportEmbeddings { checkpoint, dataset, out, threshold } => {
            let model = read_checkpoint(&checkpoint)?.model()?;
            let ds = crate::data::read_dataset(&dataset)?;
            let samples: Vec<&Sample> = ds.samples().iter().collect();
            export_embeddings(&model, &samples, threshold, &out)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Report { dirs, csv } => {
            let r = cmd_report(&dirs)?;
            if let Some(p) = csv {
                std::fs::write(&p, r.to_csv()).map_err(|e| Error::io(&p, e))?;
            }
            print!("{}", r.to_text());
            Ok(())
        }
    }
}

/// `--out`, else the config's output directory; relative paths resolve
/// against `$FIXCLR_OUTPUT_ROOT` when it is set.
pub fn output_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    let dir = out.unwrap_or(&cfg.output_dir);
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_targets(spec: &str, num_domains: usize) -> Result<Vec<usize>> {
    if spec == "all" {
        return Ok((0..num_domains).collect());
    }
    match spec.parse::<usize>() {
        Ok(t) if t < num_domains => Ok(vec![t]),
        _ => Err(Error::Config(format!("--target must be `all` or a domain index below {num_domains}, got {spec:?}"))),
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.set_seed(s);
    }
    let ds = cfg.load_dataset()?;
    let targets = parse_targets(&args.target, ds.num_domains())?;
    let root = output_dir(&cfg, args.out.as_deref());
    let dir = run_dir(&root, &cfg);
    let runs = train_run(&cfg, &ds, &targets, &dir, RunMode { resume: args.resume, overwrite: args.overwrite, max_epochs: args.max_epochs })?;
    print!("{}", summary_csv(&runs));
    Ok(())
}

pub fn run_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    root.join(format!("{}-seed{}", cfg.method.regularizer.name(), cfg.train.seed))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunMode {
    pub resume: bool,
    pub overwrite: bool,
    pub max_epochs: Option<usize>,
}

/// Trains `targets` into run directory `dir` and writes its metadata and
/// summary.
pub fn train_run(
    cfg: &ExperimentConfig,
    ds: &MultiDomainDataset,
    targets: &[usize],
    dir: &Path,
    mode: RunMode,
) -> Result<Vec<RunMetrics>> {
    if dir.join("run.json").exists() && !mode.resume && !mode.overwrite {
        return Err(Error::Config(format!("{} already holds a run; pass --resume or --overwrite", dir.display())));
    }
    create_dir(dir)?;
    let meta = RunMeta {
        version: env!("CARGO_PKG_VERSION").to_owned(),
        method: cfg.method.regularizer,
        train_seed: cfg.train.seed,
        split_seed: cfg.split.seed,
        dataset_seed: match &cfg.dataset {
            DatasetSection::Synthetic(s) => Some(s.seed),
            DatasetSection::File { .. } => None,
        },
        init: cfg.train.model.model_config(ds.feature_dim(), ds.num_classes()).init,
        benchmark: benchmark_id(ds, cfg.split.n_labels),
        targets: targets.to_vec(),
        config: cfg.resolved(),
    };
    write_file(&dir.join("config.toml"), &cfg.resolved().to_toml())?;
    write_file(&dir.join("run.json"), &serde_json::to_string_pretty(&meta).expect("metadata serializes"))?;
    let runs = targets
        .iter()
        .map(|&t| train_target(cfg, ds, t, &dir.join(format!("target{t}")), mode))
        .collect::<Result<Vec<_>>>()?;
    write_file(&dir.join("summary.csv"), &summary_csv(&runs))?;
    Ok(runs)
}

/// One leave-one-domain-out run with per-epoch checkpoints and metrics.
pub fn train_target(
    cfg: &ExperimentConfig,
    ds: &MultiDomainDataset,
    target: usize,
    dir: &Path,
    mode: RunMode,
) -> Result<RunMetrics> {
    let tc: TrainConfig = cfg.train_config();
    let split = split_for_target(ds, target, cfg.split.n_labels, cfg.split.seed)?;
    let info = RunInfo {
        method: tc.regularizer.name().to_owned(),
        seed: tc.seed,
        target_domain: target,
        benchmark: benchmark_id(ds, split.n_labels),
    };
    let ckpt_dir = dir.join("checkpoints");
    let last = ckpt_dir.join("last.ckpt");
    create_dir(&ckpt_dir)?;
    write_file(&dir.join("info.json"), &serde_json::to_string_pretty(&info).expect("info serializes"))?;

    let resume_state = if mode.resume && last.exists() {
        let ckpt = read_checkpoint(&last)?;
        let done = ckpt.header.epoch;
        let mut prior = read_metrics(dir, info.clone())?;
        prior.epochs.retain(|r| r.epoch < done);
        prior.steps.retain(|s| s.epoch < done);
        if prior.epochs.len() != done {
            return Err(Error::Data(format!(
                "{}: checkpoint is at epoch {done} but metrics.csv has {} rows",
                dir.display(),
                prior.epochs.len()
            )));
        }
        let velocity = ckpt.momentum()?.ok_or_else(|| Error::Data(format!("{}: no optimizer state", last.display())))?;
        Some(ResumeState { model: ckpt.model()?, velocity, epochs_done: done, epochs: prior.epochs, steps: prior.steps })
    } else {
        None
    };

    let mut so_far = RunMetrics {
        info: info.clone(),
        epochs: resume_state.as_ref().map(|r| r.epochs.clone()).unwrap_or_default(),
        steps: resume_state.as_ref().map(|r| r.steps.clone()).unwrap_or_default(),
    };
    if so_far.epochs.len() >= tc.epochs {
        return Ok(so_far);
    }
    if resume_state.is_none() {
        // Epoch-0 state, so a run interrupted before its first epoch ends
        // can resume and the untrained model can be inspected.
        let init = crate::model::Model::new(tc.model.model_config(ds.feature_dim(), ds.num_classes()), tc.seed)?;
        write_metrics(&so_far, dir)?;
        write_checkpoint(&Checkpoint::new(&init, tc.seed, 0, Some(&init.zeros_like())), &last)?;
    }
    let mut on_epoch = |e: &EpochEnd<'_>| -> Result<()> {
        so_far.epochs.push(e.row.clone());
        so_far.steps.extend_from_slice(e.steps);
        write_metrics(&so_far, dir)?;
        write_checkpoint(&Checkpoint::new(e.model, tc.seed, e.row.epoch + 1, Some(e.velocity)), &last)
    };
    let opts = FitOptions {
        resume: resume_state,
        on_epoch: Some(&mut on_epoch),
        stop_after: mode.max_epochs,
        ..Default::default()
    };
    let result = fit_with(ds, &split, &tc, opts)?;
    Ok(result.metrics)
}

/// Final epoch row per target followed by a `mean` row.
pub fn summary_csv(runs: &[RunMetrics]) -> String {
    let mut out = format!("target,{}\n", METRICS_HEADER);
    let finals: Vec<&EpochRow> = runs.iter().filter_map(RunMetrics::final_epoch).collect();
    for (r, row) in runs.iter().zip(&finals) {
        writeln!(out, "{},{}", r.info.target_domain, crate::metrics::epoch_row_csv(row)).unwrap();
    }
    if !finals.is_empty() {
        let avg = |f: fn(&EpochRow) -> f64| crate::metrics::mean(&finals.iter().map(|r| f(r)).collect::<Vec<_>>());
        let quality: Vec<f64> = finals.iter().filter_map(|r| r.pl_quality).collect();
        let mean_row = EpochRow {
            epoch: finals[0].epoch,
            target_accuracy: avg(|r| r.target_accuracy),
            pl_quality: (!quality.is_empty()).then(|| crate::metrics::mean(&quality)),
            pl_keep_ratio: avg(|r| r.pl_keep_ratio),
            domain_probe_accuracy: avg(|r| r.domain_probe_accuracy),
            mean_loss_s: avg(|r| r.mean_loss_s),
            mean_loss_u: avg(|r| r.mean_loss_u),
            mean_loss_c: avg(|r| r.mean_loss_c),
            epoch_seconds: avg(|r| r.epoch_seconds),
            forward_pass_total: finals.iter().map(|r| r.forward_pass_total).sum::<u64>() / finals.len() as u64,
        };
        writeln!(out, "mean,{}", crate::metrics::epoch_row_csv(&mean_row)).unwrap();
    }
    out
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, jobs: usize, overwrite: bool) -> Result<Report> {
    let sweep = cfg.sweep.as_ref().ok_or_else(|| Error::Config("config has no [sweep] section".into()))?;
    let ds = cfg.load_dataset()?;
    let targets = match &sweep.targets {
        Some(t) => {
            if let Some(bad) = t.iter().find(|&&t| t >= ds.num_domains()) {
                return Err(Error::Config(format!("sweep target {bad} out of range")));
            }
            t.clone()
        }
        None => (0..ds.num_domains()).collect(),
    };
    let mut cells = Vec::new();
    for &m in &sweep.methods {
        for &s in &sweep.seeds {
            let mut c = cfg.clone();
            c.set_method(m);
            c.set_seed(s);
            c.sweep = None;
            cells.push(c);
        }
    }
    let mode = RunMode { overwrite, ..Default::default() };
    let work = |c: &ExperimentConfig| train_run(c, &ds, &targets, &run_dir(out, c), mode);
    let results: Vec<Result<Vec<RunMetrics>>> = if jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
        pool.install(|| cells.par_iter().map(work).collect())
    } else {
        cells.iter().map(work).collect()
    };
    let runs: Vec<RunMetrics> = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
    let r = report(&runs)?;
    write_file(&out.join("report.csv"), &r.to_csv())?;
    write_file(&out.join("report.txt"), &r.to_text())?;
    Ok(r)
}

/// Loads every target run under each directory. A directory may be a run
/// directory (with `target*` children) or a single target directory.
pub fn load_runs(dirs: &[PathBuf]) -> Result<Vec<RunMetrics>> {
    let mut runs = Vec::new();
    for dir in dirs {
        let mut targets = Vec::new();
        if dir.join("info.json").exists() {
            targets.push(dir.clone());
        } else {
            let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
            for entry in entries {
                let p = entry.map_err(|e| Error::io(dir, e))?.path();
                if p.join("info.json").exists() {
                    targets.push(p);
                }
            }
            targets.sort();
        }
        if targets.is_empty() {
            return Err(Error::Data(format!("{} contains no runs", dir.display())));
        }
        for t in targets {
            let p = t.join("info.json");
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let info: RunInfo = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            runs.push(read_metrics(&t, info)?);
        }
    }
    Ok(runs)
}

pub fn cmd_report(dirs: &[PathBuf]) -> Result<Report> {
    if dirs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    report(&load_runs(dirs)?)
}
