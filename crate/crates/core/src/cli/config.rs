//! Experiment configuration.
//!
//! The file is TOML restricted to flat sections of `key = value` lines (see
//! the README for the grammar). Unknown sections and keys are rejected, and
//! every value is checked before any training starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::synthbench::{default_class_names, split_seen_unseen};
use crate::tensor::OptimizerConfig;
use crate::trainer::{AblationMode, ImageLayout, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub classes: usize,
    pub embed_dim: usize,
    pub feature_dim: usize,
    /// Per-coordinate standard deviation of backbone features.
    pub noise: f64,
    pub height: usize,
    pub width: usize,
    pub images_per_epoch: usize,
    pub eval_images: usize,
    pub objects_per_image: usize,
    /// Text vector file; synthetic embeddings when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// Class names, background first. Defaults to the built-in name list.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

impl Default for TaskSection {
    fn default() -> Self {
        let layout = ImageLayout::default();
        Self {
            classes: 8,
            embed_dim: 16,
            feature_dim: 32,
            noise: 0.1,
            height: layout.height,
            width: layout.width,
            images_per_epoch: layout.images_per_epoch,
            eval_images: layout.eval_images,
            objects_per_image: layout.objects_per_image,
            embeddings: None,
            class_names: None,
        }
    }
}

impl TaskSection {
    pub fn layout(&self) -> ImageLayout {
        ImageLayout {
            height: self.height,
            width: self.width,
            images_per_epoch: self.images_per_epoch,
            eval_images: self.eval_images,
            objects_per_image: self.objects_per_image,
        }
    }
}

/// Training settings shared by every cell. `tau` and `divide_coefficient`
/// override the per-K schedule when set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divide_coefficient: Option<f64>,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub gen_batch: usize,
    pub clf_batch_images: usize,
    pub q_min: usize,
    pub pseudo_per_class: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = desk_train_config();
        Self {
            tau: None,
            divide_coefficient: None,
            warmup_epochs: t.warmup_epochs,
            epochs: t.epochs,
            gen_batch: t.gen_batch,
            clf_batch_images: t.clf_batch_images,
            q_min: t.q_min,
            pseudo_per_class: t.pseudo_per_class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Numbers of unseen classes, one cell per entry.
    pub unseen: Vec<usize>,
    pub modes: Vec<AblationMode>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            unseen: vec![2],
            modes: vec![AblationMode::NoRecursive, AblationMode::ConfidenceWeighted],
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Threshold and loss divisor for one K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub k: usize,
    pub tau: f64,
    pub divide_coefficient: f64,
}

/// 0.85 / 40 for K = 2 and 10, 0.7 / 80 for every other K.
pub fn default_schedule(k: usize) -> ScheduleEntry {
    let (tau, divide_coefficient) = match k {
        2 | 10 => (0.85, 40.0),
        _ => (0.7, 80.0),
    };
    ScheduleEntry {
        k,
        tau,
        divide_coefficient,
    }
}

/// Defaults sized for the synthetic benchmark on one core.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 20,
        warmup_epochs: 3,
        gen_batch: 64,
        clf_batch_images: 8,
        pseudo_per_class: 64,
        generator_optimizer: OptimizerConfig::adam(1e-3),
        classifier_optimizer: OptimizerConfig::sgd(1.0, 0.9, 5e-4),
        kernel: KernelSpec::new(vec![0.25, 0.5, 1.0, 2.0, 4.0]).expect("static bandwidths"),
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub task: TaskSection,
    pub train: TrainSection,
    pub generator_optimizer: OptimizerConfig,
    pub classifier_optimizer: OptimizerConfig,
    pub kernel: KernelSpec,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<ScheduleEntry>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = desk_train_config();
        Self {
            experiment: ExperimentSection::default(),
            task: TaskSection::default(),
            train: TrainSection::default(),
            generator_optimizer: t.generator_optimizer,
            classifier_optimizer: t.classifier_optimizer,
            kernel: t.kernel,
            schedule: Vec::new(),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_owned(),
        msg: msg.into(),
    }
}

impl ExperimentConfig {
    /// Parses and validates. Syntax errors and unknown keys report a line.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigSyntax {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            msg: e.message().to_owned(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::ConfigSyntax { line, msg } => Error::ConfigSyntax {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })?;
        // embedding paths are relative to the config file
        if let (Some(emb), Some(dir)) = (&cfg.task.embeddings, path.parent()) {
            if emb.is_relative() {
                cfg.task.embeddings = Some(dir.join(emb));
            }
        }
        Ok(cfg)
    }

    /// Schedule entry for `k`: explicit `[train]` values first, then a
    /// matching `[[schedule]]` entry, then [`default_schedule`].
    pub fn schedule_for(&self, k: usize) -> ScheduleEntry {
        let base = self
            .schedule
            .iter()
            .rev()
            .find(|s| s.k == k)
            .copied()
            .unwrap_or_else(|| default_schedule(k));
        ScheduleEntry {
            k,
            tau: self.train.tau.unwrap_or(base.tau),
            divide_coefficient: self
                .train
                .divide_coefficient
                .unwrap_or(base.divide_coefficient),
        }
    }

    pub fn train_config(&self, k: usize, mode: AblationMode) -> TrainConfig {
        let s = self.schedule_for(k);
        TrainConfig {
            tau: s.tau,
            divide_coefficient: s.divide_coefficient,
            warmup_epochs: self.train.warmup_epochs,
            epochs: self.train.epochs,
            gen_batch: self.train.gen_batch,
            clf_batch_images: self.train.clf_batch_images,
            q_min: self.train.q_min,
            pseudo_per_class: self.train.pseudo_per_class,
            mode,
            seed: self.experiment.seed,
            generator_optimizer: self.generator_optimizer,
            classifier_optimizer: self.classifier_optimizer,
            kernel: self.kernel.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.task;
        if t.classes < 2 {
            return Err(bad("task.classes", format!("{} is below 2", t.classes)));
        }
        if t.embed_dim == 0 && t.embeddings.is_none() {
            return Err(bad("task.embed_dim", "must be ≥ 1"));
        }
        if t.feature_dim == 0 {
            return Err(bad("task.feature_dim", "must be ≥ 1"));
        }
        if !(t.noise.is_finite() && t.noise >= 0.0) {
            return Err(bad("task.noise", format!("{} is not ≥ 0", t.noise)));
        }
        for (key, v) in [
            ("task.height", t.height),
            ("task.width", t.width),
            ("task.images_per_epoch", t.images_per_epoch),
            ("task.eval_images", t.eval_images),
        ] {
            if v == 0 {
                return Err(bad(key, "must be ≥ 1"));
            }
        }
        if t.objects_per_image > t.height {
            return Err(bad("task.objects_per_image", "exceeds task.height"));
        }
        if let Some(names) = &t.class_names {
            if names.len() != t.classes {
                return Err(bad(
                    "task.class_names",
                    format!("{} names for {} classes", names.len(), t.classes),
                ));
            }
        }
        if let Some(tau) = self.train.tau {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(bad("train.tau", format!("{tau} is not in (0, 1)")));
            }
        }
        if let Some(g) = self.train.divide_coefficient {
            if !(g.is_finite() && g >= 1.0) {
                return Err(bad("train.divide_coefficient", format!("{g} is not ≥ 1")));
            }
        }
        for (i, s) in self.schedule.iter().enumerate() {
            if !(s.tau > 0.0 && s.tau < 1.0) {
                return Err(bad(
                    &format!("schedule[{i}].tau"),
                    format!("{} is not in (0, 1)", s.tau),
                ));
            }
            if !(s.divide_coefficient.is_finite() && s.divide_coefficient >= 1.0) {
                return Err(bad(
                    &format!("schedule[{i}].divide_coefficient"),
                    format!("{} is not ≥ 1", s.divide_coefficient),
                ));
            }
        }
        let e = &self.experiment;
        if e.unseen.is_empty() {
            return Err(bad("experiment.unseen", "needs at least one K"));
        }
        if e.modes.is_empty() {
            return Err(bad("experiment.modes", "needs at least one mode"));
        }
        for (i, m) in e.modes.iter().enumerate() {
            if e.modes[..i].contains(m) {
                return Err(bad("experiment.modes", format!("`{m}` listed twice")));
            }
        }
        let names = t
            .class_names
            .clone()
            .unwrap_or_else(|| default_class_names(t.classes));
        for &k in &e.unseen {
            split_seen_unseen(&names, k)
                .map_err(|err| bad("experiment.unseen", err.to_string()))?;
            if k + 1 >= t.classes {
                return Err(bad(
                    "experiment.unseen",
                    format!(
                        "K = {k} leaves no seen foreground class among {}",
                        t.classes
                    ),
                ));
            }
            let cfg = self.train_config(k, e.modes[0]);
            cfg.validate().map_err(|err| match err {
                Error::Config { key, msg } => {
                    let section = match key.as_str() {
                        "generator_optimizer" | "classifier_optimizer" => key,
                        _ => format!("train.{key}"),
                    };
                    bad(&section, msg)
                }
                other => other,
            })?;
        }
        Ok(())
    }

    /// Fully resolved config: every default and every per-K schedule entry
    /// written out, so re-running it reproduces the same cells.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.schedule = self
            .experiment
            .unseen
            .iter()
            .map(|&k| self.schedule_for(k))
            .collect();
        out.train.tau = None;
        out.train.divide_coefficient = None;
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
