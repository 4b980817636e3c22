//! Experiment runner: `run`, `ablation` and `eval` subcommands.

pub mod config;
pub mod persist;
pub mod report;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::synthbench::{default_class_names, load_embeddings, split_seen_unseen, SyntheticTask};
use crate::trainer::{evaluate, run_training, AblationMode, ZeroShotTask};

pub use config::ExperimentConfig;
pub use persist::{load_model, save_model};
pub use report::{CellHistory, ResultRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "zsmmd",
    version,
    about = "Zero-shot pseudo-feature experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Overrides `experiment.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `experiment.out_dir`.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Restricts `run` to one mode.
    #[arg(long, global = true)]
    pub mode: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every (K, mode) cell of the config and write the result tables.
    Run { config: PathBuf },
    /// Equal-weight against confidence-weighted, paired per K.
    Ablation { config: PathBuf },
    /// Evaluate a saved model on the task of a config.
    Eval { model: PathBuf, task_spec: PathBuf },
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::ConfigSyntax { .. }
        | Error::Malformed { .. }
        | Error::InconsistentDimension { .. }
        | Error::MissingTokens(_) => EXIT_CONFIG,
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_FAILURE,
    }
}

/// Parses arguments, runs the command and reports errors on stderr.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config } => {
            let mut cfg = load_with_overrides(config, cli)?;
            if let Some(m) = &cli.mode {
                cfg.experiment.modes = vec![parse_mode(m)?];
            }
            let out = run_experiment(&cfg)?;
            out.write(&cfg)?;
            print!("{}", report::results_table(&out.rows));
            Ok(())
        }
        Command::Ablation { config } => {
            let mut cfg = load_with_overrides(config, cli)?;
            if cli.mode.is_some() {
                return Err(Error::Config {
                    key: "--mode".into(),
                    msg: "ablation always runs both weighting modes".into(),
                });
            }
            cfg.experiment.modes =
                vec![AblationMode::EqualWeight, AblationMode::ConfidenceWeighted];
            let out = run_experiment(&cfg)?;
            out.write(&cfg)?;
            print!("{}", report::results_table(&out.rows));
            Ok(())
        }
        Command::Eval { model, task_spec } => {
            let cfg = load_with_overrides(task_spec, cli)?;
            let rows = eval_model(model, &cfg)?;
            let csv = report::results_csv(&rows)?;
            print!("{}", String::from_utf8_lossy(&csv));
            if cli.out_dir.is_some() {
                let dir = &cfg.experiment.out_dir;
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                write_file(&dir.join("eval.csv"), &csv)?;
            }
            Ok(())
        }
    }
}

fn parse_mode(s: &str) -> Result<AblationMode> {
    AblationMode::parse(s).ok_or_else(|| Error::Config {
        key: "--mode".into(),
        msg: format!(
            "unknown mode `{s}` (expected one of {})",
            AblationMode::ALL.map(|m| m.as_str()).join(", ")
        ),
    })
}

fn load_with_overrides(path: &Path, cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.experiment.out_dir = dir.clone();
    }
    Ok(cfg)
}

/// Builds the synthetic task of a config (shared by every K).
pub fn build_task(cfg: &ExperimentConfig) -> Result<SyntheticTask> {
    let t = &cfg.task;
    let names = t
        .class_names
        .clone()
        .unwrap_or_else(|| default_class_names(t.classes));
    match &t.embeddings {
        Some(path) => {
            let embs = load_embeddings(path, &names)?;
            SyntheticTask::with_embeddings(names, embs, t.feature_dim, t.noise, cfg.experiment.seed)
        }
        None => {
            let mut task = SyntheticTask::new(
                t.classes,
                t.embed_dim,
                t.feature_dim,
                t.noise,
                cfg.experiment.seed,
            )?;
            if t.class_names.is_some() {
                task = SyntheticTask::with_embeddings(
                    names,
                    task.embeddings().to_vec(),
                    t.feature_dim,
                    t.noise,
                    cfg.experiment.seed,
                )?;
            }
            Ok(task)
        }
    }
}

pub fn zero_shot_task(
    cfg: &ExperimentConfig,
    task: &SyntheticTask,
    k: usize,
) -> Result<ZeroShotTask> {
    let split = split_seen_unseen(task.class_names(), k).map_err(|e| Error::Config {
        key: "experiment.unseen".into(),
        msg: e.to_string(),
    })?;
    ZeroShotTask::new(task.clone(), split, cfg.task.layout())
}

/// Everything one experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub histories: Vec<CellHistory>,
    pub models: Vec<(String, Vec<u8>)>,
}

/// Trains every (K, mode) cell in config order. All cells share the
/// experiment seed, so modes at the same K are paired.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let task = build_task(cfg)?;
    let mut out = ExperimentOutput {
        rows: Vec::new(),
        histories: Vec::new(),
        models: Vec::new(),
    };
    for &k in &cfg.experiment.unseen {
        let zs = zero_shot_task(cfg, &task, k)?;
        for &mode in &cfg.experiment.modes {
            let outcome = run_training(&zs, &cfg.train_config(k, mode))?;
            out.rows.push(ResultRow::new(k, mode, &outcome.final_eval));
            out.histories.push(CellHistory {
                k,
                model: report::model_label(mode).to_owned(),
                mode,
                history: outcome.history,
            });
            out.models.push((
                format!("k{k}-{mode}.zsmd"),
                persist::encode_model(&outcome.state.generator, &outcome.state.classifier),
            ));
        }
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

impl ExperimentOutput {
    /// Writes results.csv, results.json, history.csv, config.toml and the
    /// models under `models/`.
    pub fn write(&self, cfg: &ExperimentConfig) -> Result<()> {
        let dir = &cfg.experiment.out_dir;
        let models = dir.join("models");
        std::fs::create_dir_all(&models).map_err(|e| Error::io(&models, e))?;
        write_file(&dir.join("results.csv"), &report::results_csv(&self.rows)?)?;
        write_file(
            &dir.join("history.csv"),
            &report::history_csv(&self.histories)?,
        )?;
        write_file(
            &dir.join("results.json"),
            &report::results_json(&self.rows, &self.histories),
        )?;
        write_file(
            &dir.join("config.toml"),
            cfg.resolved().to_toml().as_bytes(),
        )?;
        for (name, bytes) in &self.models {
            write_file(&models.join(name), bytes)?;
        }
        Ok(())
    }
}

/// Evaluates a saved model on the held-out set of every K in `cfg`.
pub fn eval_model(model: &Path, cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let (generator, classifier) = load_model(model)?;
    let task = build_task(cfg)?;
    persist::check_dimensions(
        &generator,
        &classifier,
        task.embed_dim(),
        task.feature_dim(),
        task.classes(),
    )?;
    let mut rows = Vec::new();
    for &k in &cfg.experiment.unseen {
        let zs = zero_shot_task(cfg, &task, k)?;
        let images = zs.evaluation_set(cfg.experiment.seed)?;
        let report = evaluate(&classifier, &zs.split, &images)?;
        let mut row = ResultRow::new(k, AblationMode::ConfidenceWeighted, &report);
        row.model = "Loaded".into();
        rows.push(row);
    }
    Ok(rows)
}
