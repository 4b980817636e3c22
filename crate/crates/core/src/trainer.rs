//! Joint training of the generator and the pixel classifier.
//!
//! Every epoch walks a fresh set of synthetic training images (seen classes
//! only) in groups of `clf_batch_images`:
//!
//! 1. for each class in an image, one MMD step pulls the generator's output
//!    for that class's embedding toward the image's real features;
//! 2. once the warmup is over, each unseen class gets a recursive step: the
//!    generator proposes `gen_batch` features, the classifier keeps those it
//!    assigns to the right class with confidence above `tau`, and the
//!    generator is trained toward that set with the confidence-weighted loss
//!    divided by `divide_coefficient`;
//! 3. after each group, one classifier step on the group's real pixels plus
//!    generated features for every unseen class.
//!
//! Randomness is split into independent streams (image sampling, generator
//! noise for steps 1 and 3, and step 2), so skipping or altering the
//! recursive step never shifts the draws seen by the other two.

use serde::{Deserialize, Serialize};

use crate::classifier::PixelClassifier;
use crate::error::{Error, Result};
use crate::generator::{ClassEmbedding, GeneratorModel};
use crate::kernel::{FeatureSet, KernelSpec, Origin, WeightedFeatureSet};
use crate::metrics::{hiou, ConfusionMatrix, SegMetrics};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::synthbench::{ClassSplit, LabeledFeatureImage, SyntheticTask};
use crate::tensor::{Matrix, OptimizerConfig, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// Selected pseudo labels weighted by their confidence.
    ConfidenceWeighted,
    /// Selected pseudo labels all weighted 1.
    EqualWeight,
    /// Baseline without the recursive step.
    NoRecursive,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [
        AblationMode::ConfidenceWeighted,
        AblationMode::EqualWeight,
        AblationMode::NoRecursive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::ConfidenceWeighted => "confidence-weighted",
            AblationMode::EqualWeight => "equal-weight",
            AblationMode::NoRecursive => "no-recursive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Confidence threshold for pseudo-label selection, in `(0, 1)`.
    pub tau: f64,
    /// Divisor of the recursive loss, `≥ 1`.
    pub divide_coefficient: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    /// Generated features per generator step.
    pub gen_batch: usize,
    /// Images per classifier step.
    pub clf_batch_images: usize,
    /// Smallest pseudo-label set a recursive step may use.
    pub q_min: usize,
    /// Generated features per unseen class in each classifier step.
    pub pseudo_per_class: usize,
    pub mode: AblationMode,
    pub seed: u64,
    pub generator_optimizer: OptimizerConfig,
    pub classifier_optimizer: OptimizerConfig,
    pub kernel: KernelSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.7,
            divide_coefficient: 80.0,
            warmup_epochs: 3,
            epochs: 20,
            gen_batch: 128,
            clf_batch_images: 8,
            q_min: 2,
            pseudo_per_class: 128,
            mode: AblationMode::ConfidenceWeighted,
            seed: 0,
            generator_optimizer: OptimizerConfig::adam(2e-4),
            classifier_optimizer: OptimizerConfig::sgd(1e-7, 0.9, 5e-4),
            kernel: KernelSpec::default(),
        }
    }
}

impl TrainConfig {
    /// Checks every field; the error names the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Error::Config {
            key: key.to_owned(),
            msg,
        };
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(bad("tau", format!("{} is not in (0, 1)", self.tau)));
        }
        if !(self.divide_coefficient.is_finite() && self.divide_coefficient >= 1.0) {
            return Err(bad(
                "divide_coefficient",
                format!("{} is not ≥ 1", self.divide_coefficient),
            ));
        }
        if self.epochs == 0 {
            return Err(bad("epochs", "must be ≥ 1".into()));
        }
        if self.gen_batch == 0 {
            return Err(bad("gen_batch", "must be ≥ 1".into()));
        }
        if self.clf_batch_images == 0 {
            return Err(bad("clf_batch_images", "must be ≥ 1".into()));
        }
        if self.q_min < 2 {
            return Err(bad("q_min", format!("{} is below 2", self.q_min)));
        }
        if self.pseudo_per_class == 0 {
            return Err(bad("pseudo_per_class", "must be ≥ 1".into()));
        }
        self.generator_optimizer
            .validate()
            .map_err(|e| bad("generator_optimizer", e.to_string()))?;
        self.classifier_optimizer
            .validate()
            .map_err(|e| bad("classifier_optimizer", e.to_string()))?;
        Ok(())
    }
}

/// Synthetic images of the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageLayout {
    pub height: usize,
    pub width: usize,
    pub images_per_epoch: usize,
    pub eval_images: usize,
    /// Foreground classes per image (drawn without replacement).
    pub objects_per_image: usize,
}

impl Default for ImageLayout {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            images_per_epoch: 32,
            eval_images: 48,
            objects_per_image: 2,
        }
    }
}

/// A synthetic task together with its class split and image layout.
#[derive(Debug, Clone)]
pub struct ZeroShotTask {
    pub task: SyntheticTask,
    pub split: ClassSplit,
    pub layout: ImageLayout,
}

impl ZeroShotTask {
    pub fn new(task: SyntheticTask, split: ClassSplit, layout: ImageLayout) -> Result<Self> {
        if split.seen.is_empty() {
            return Err(Error::Domain("task needs at least one seen class".into()));
        }
        let c = task.classes();
        if split.seen.iter().chain(&split.unseen).any(|&k| k >= c)
            || split.seen.len() + split.unseen.len() != c
        {
            return Err(Error::Domain(
                "class split does not partition the task".into(),
            ));
        }
        if layout.height == 0 || layout.width == 0 || layout.images_per_epoch == 0 {
            return Err(Error::Domain("image layout has a zero dimension".into()));
        }
        if layout.objects_per_image > layout.height {
            return Err(Error::Domain(
                "more objects per image than image rows".into(),
            ));
        }
        Ok(Self {
            task,
            split,
            layout,
        })
    }

    /// Class that fills each image before objects are placed.
    pub fn base_class(&self) -> usize {
        self.split.seen[0]
    }

    fn draw_image(&self, pool: &[usize], rng: &mut SeededRng) -> Result<LabeledFeatureImage> {
        let mut pool = pool.to_vec();
        let k = self.layout.objects_per_image.min(pool.len());
        let mut present = vec![self.base_class()];
        for i in 0..k {
            let j = i + rng.below(pool.len() - i);
            pool.swap(i, j);
            present.push(pool[i]);
        }
        self.task
            .sample_image(self.layout.height, self.layout.width, &present, rng)
    }

    /// Training image: base class plus seen objects only.
    pub fn training_image(&self, rng: &mut SeededRng) -> Result<LabeledFeatureImage> {
        let base = self.base_class();
        let pool: Vec<usize> = self
            .split
            .seen
            .iter()
            .copied()
            .filter(|&c| c != base)
            .collect();
        self.draw_image(&pool, rng)
    }

    /// Evaluation image: objects drawn from every non-base class.
    pub fn evaluation_image(&self, rng: &mut SeededRng) -> Result<LabeledFeatureImage> {
        let base = self.base_class();
        let pool: Vec<usize> = (0..self.task.classes()).filter(|&c| c != base).collect();
        self.draw_image(&pool, rng)
    }

    /// Held-out images, fixed by the seed alone.
    pub fn evaluation_set(&self, seed: u64) -> Result<Vec<LabeledFeatureImage>> {
        let mut rng = SeededRng::new(seed).fork(STREAM_EVAL);
        (0..self.layout.eval_images)
            .map(|_| self.evaluation_image(&mut rng))
            .collect()
    }
}

/// Generates `n` features for `emb` and keeps row `i` iff the classifier
/// assigns it to `emb.class_id` with confidence strictly above `tau`. The
/// kept confidences become the weights; an empty result is a valid outcome.
pub fn select_high_confidence<T: Scalar>(
    generator: &GeneratorModel<T>,
    classifier: &PixelClassifier<T>,
    emb: &ClassEmbedding<T>,
    rng: &mut SeededRng,
    n: usize,
    tau: f64,
) -> Result<WeightedFeatureSet<T>> {
    if emb.class_id >= classifier.classes() {
        return Err(Error::LabelOutOfRange {
            label: emb.class_id,
            classes: classifier.classes(),
        });
    }
    let generated = generator.generate(emb, rng, n)?;
    let pred = classifier.classify(&generated.features)?;
    let tau = T::of(tau);
    let keep: Vec<usize> = (0..pred.len())
        .filter(|&i| pred.labels[i] == emb.class_id && pred.confidence[i] > tau)
        .collect();
    let weights = keep.iter().map(|&i| pred.confidence[i]).collect();
    WeightedFeatureSet::new(generated.features.select_rows(&keep), weights, emb.class_id)
}

/// Seen, unseen and overall metrics of one evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seen: SegMetrics,
    pub unseen: Option<SegMetrics>,
    pub overall: SegMetrics,
    /// Harmonic mean of seen and unseen mIoU; absent without unseen classes
    /// or when both are zero.
    pub hiou: Option<f64>,
}

pub fn evaluate(
    classifier: &PixelClassifier<f64>,
    split: &ClassSplit,
    images: &[LabeledFeatureImage],
) -> Result<EvalReport> {
    let mut cm = ConfusionMatrix::new(classifier.classes())?;
    for img in images {
        let pred = classifier.classify(&img.features)?;
        cm.accumulate(&pred.labels, &img.labels)?;
    }
    let all: Vec<usize> = (0..classifier.classes()).collect();
    let seen = cm.compute_metrics(&split.seen)?;
    let unseen = if split.unseen.is_empty() {
        None
    } else {
        Some(cm.compute_metrics(&split.unseen)?)
    };
    let hiou = unseen.and_then(|u| hiou(seen.miou, u.miou).ok());
    Ok(EvalReport {
        seen,
        unseen,
        overall: cm.compute_metrics(&all)?,
        hiou,
    })
}

/// Pseudo-label selection statistics of one unseen class over an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub class_id: usize,
    pub attempts: usize,
    /// Steps skipped because fewer than `q_min` features were selected.
    pub skipped: usize,
    pub mean_selected: f64,
    pub max_selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub seen_mmd_loss: f64,
    /// Mean scaled recursive loss; `None` when no recursive step ran.
    pub recursive_loss: Option<f64>,
    pub selection: Vec<SelectionStats>,
    pub classifier_loss: f64,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

/// Models, optimizers and the run's root seed.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub generator: GeneratorModel<f64>,
    pub classifier: PixelClassifier<f64>,
    pub generator_opt: OptimizerState<f64>,
    pub classifier_opt: OptimizerState<f64>,
    seed: u64,
}

const STREAM_INIT_GENERATOR: u64 = 1;
const STREAM_INIT_CLASSIFIER: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_EPOCH_BASE: u64 = 16;
const STREAMS_PER_EPOCH: u64 = 4;

fn epoch_streams(seed: u64, epoch: usize) -> (SeededRng, SeededRng, SeededRng) {
    let root = SeededRng::new(seed);
    let base = STREAM_EPOCH_BASE + STREAMS_PER_EPOCH * epoch as u64;
    (root.fork(base), root.fork(base + 1), root.fork(base + 2))
}

impl TrainState {
    pub fn new(task: &ZeroShotTask, config: &TrainConfig) -> Result<Self> {
        let root = SeededRng::new(config.seed);
        let generator = GeneratorModel::new(
            task.task.embed_dim(),
            task.task.feature_dim(),
            &mut root.fork(STREAM_INIT_GENERATOR),
        )?;
        let classifier = PixelClassifier::new(
            task.task.feature_dim(),
            task.task.classes(),
            &mut root.fork(STREAM_INIT_CLASSIFIER),
        )?;
        Ok(Self {
            generator,
            classifier,
            generator_opt: OptimizerState::new(config.generator_optimizer)?,
            classifier_opt: OptimizerState::new(config.classifier_optimizer)?,
            seed: config.seed,
        })
    }
}

/// Random subset of at most `cap` rows, original order kept.
fn subsample(m: &Matrix<f64>, cap: usize, rng: &mut SeededRng) -> Matrix<f64> {
    if m.rows() <= cap {
        return m.clone();
    }
    let mut idx: Vec<usize> = (0..m.rows()).collect();
    for i in 0..cap {
        let j = i + rng.below(idx.len() - i);
        idx.swap(i, j);
    }
    idx.truncate(cap);
    idx.sort_unstable();
    m.select_rows(&idx)
}

fn in_epoch(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Runs one epoch and evaluates on `eval_images`.
pub fn train_epoch(
    state: &mut TrainState,
    task: &ZeroShotTask,
    config: &TrainConfig,
    epoch: usize,
    eval_images: &[LabeledFeatureImage],
) -> Result<EpochRecord> {
    train_epoch_inner(state, task, config, epoch, eval_images).map_err(|e| in_epoch(epoch, e))
}

fn train_epoch_inner(
    state: &mut TrainState,
    task: &ZeroShotTask,
    config: &TrainConfig,
    epoch: usize,
    eval_images: &[LabeledFeatureImage],
) -> Result<EpochRecord> {
    let (mut data_rng, mut gen_rng, mut rec_rng) = epoch_streams(state.seed, epoch);
    let recursive = config.mode != AblationMode::NoRecursive
        && epoch >= config.warmup_epochs
        && !task.split.unseen.is_empty();

    let mut seen_losses = Vec::new();
    let mut rec_losses = Vec::new();
    let mut clf_losses = Vec::new();
    let mut selected: Vec<Vec<usize>> = vec![Vec::new(); task.split.unseen.len()];
    let mut skipped = vec![0usize; task.split.unseen.len()];

    let images = (0..task.layout.images_per_epoch)
        .map(|_| task.training_image(&mut data_rng))
        .collect::<Result<Vec<_>>>()?;

    for group in images.chunks(config.clf_batch_images) {
        for img in group {
            for class in img.classes() {
                let real = subsample(&img.features_of(class), config.gen_batch, &mut data_rng);
                let real = FeatureSet::new(real, class, Origin::Backbone)?;
                let loss = state.generator.train_seen(
                    task.task.embedding(class),
                    &real,
                    &mut state.generator_opt,
                    &mut gen_rng,
                    config.gen_batch,
                    &config.kernel,
                )?;
                seen_losses.push(loss);
            }

            if recursive {
                for (slot, &class) in task.split.unseen.iter().enumerate() {
                    let emb = task.task.embedding(class);
                    let mut pseudo = select_high_confidence(
                        &state.generator,
                        &state.classifier,
                        emb,
                        &mut rec_rng,
                        config.gen_batch,
                        config.tau,
                    )?;
                    selected[slot].push(pseudo.len());
                    if pseudo.len() < config.q_min {
                        skipped[slot] += 1;
                        continue;
                    }
                    if config.mode == AblationMode::EqualWeight {
                        pseudo = pseudo.equal_weighted();
                    }
                    let loss = state.generator.train_recursive(
                        emb,
                        &pseudo,
                        &mut state.generator_opt,
                        &mut rec_rng,
                        config.gen_batch,
                        config.divide_coefficient,
                        config.q_min,
                        &config.kernel,
                    )?;
                    rec_losses.push(loss);
                }
            }
        }

        let mut parts: Vec<Matrix<f64>> = Vec::new();
        let mut labels: Vec<usize> = Vec::new();
        for img in group {
            let keep: Vec<usize> = (0..img.labels.len())
                .filter(|&i| img.labels[i] != crate::metrics::IGNORE_LABEL)
                .collect();
            parts.push(img.features.select_rows(&keep));
            labels.extend(keep.iter().map(|&i| img.labels[i]));
        }
        for &class in &task.split.unseen {
            let pseudo = state.generator.generate(
                task.task.embedding(class),
                &mut gen_rng,
                config.pseudo_per_class,
            )?;
            parts.push(pseudo.features);
            labels.extend(std::iter::repeat_n(class, config.pseudo_per_class));
        }
        let refs: Vec<&Matrix<f64>> = parts.iter().collect();
        let batch = Matrix::vstack(&refs, task.task.feature_dim())?;
        let loss = state
            .classifier
            .train_step(&batch, &labels, &mut state.classifier_opt)?;
        clf_losses.push(loss);
    }

    let selection = if recursive {
        task.split
            .unseen
            .iter()
            .zip(selected.iter().zip(&skipped))
            .map(|(&class_id, (counts, &skipped))| SelectionStats {
                class_id,
                attempts: counts.len(),
                skipped,
                mean_selected: mean(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>()),
                max_selected: counts.iter().copied().max().unwrap_or(0),
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(EpochRecord {
        epoch,
        seen_mmd_loss: mean(&seen_losses),
        recursive_loss: (!rec_losses.is_empty()).then(|| mean(&rec_losses)),
        selection,
        classifier_loss: mean(&clf_losses),
        eval: evaluate(&state.classifier, &task.split, eval_images)?,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub history: TrainHistory,
    pub final_eval: EvalReport,
}

/// Full run: `config.epochs` epochs, then evaluation on the held-out set.
pub fn run_training(task: &ZeroShotTask, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let eval_images = task.evaluation_set(config.seed)?;
    let mut state = TrainState::new(task, config)?;
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        history
            .records
            .push(train_epoch(&mut state, task, config, epoch, &eval_images)?);
    }
    let final_eval = evaluate(&state.classifier, &task.split, &eval_images)?;
    Ok(TrainOutcome {
        state,
        history,
        final_eval,
    })
}
