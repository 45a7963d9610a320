//! Mini-batch Adam training with plateau learning-rate attenuation, early
//! stopping on validation loss and best-model selection.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use dcrnn_nn::checkpoint::{self, CHECKPOINT_MAGIC};
use dcrnn_nn::{Adam, Mode, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{chunk_sequences, derive_seed, Chunk, Normalizer, Recording, DEFAULT_CHUNK_FRAMES};
use crate::error::{Result, SedError};
use crate::features::FeatureMatrix;
use crate::metrics::{frame_metrics, EventRoll, MetricsReport};
use crate::model::{Crnn, ModelConfig};

pub const DECISION_THRESHOLD: f64 = 0.5;
pub const CURVE_HEADER: &str = "epoch,train_loss,val_loss,val_f1,val_er,lr,seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    pub lr_factor: f64,
    /// Epochs without improvement before the learning rate is multiplied by `lr_factor`.
    pub lr_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub chunk_frames: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            initial_lr: 0.01,
            patience: 30,
            lr_factor: 0.5,
            lr_patience: 10,
            max_epochs: 200,
            seed: 0,
            chunk_frames: DEFAULT_CHUNK_FRAMES,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SedError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.patience == 0 || self.lr_patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("learning-rate factor must be in (0, 1)");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.chunk_frames == 0 {
            return bad("chunk length must be positive");
        }
        Ok(())
    }
}

/// Counts consecutive epochs whose validation loss is not strictly below the best so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Returns whether `loss` is a new best.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn stale_epochs(&self) -> usize {
        self.stale
    }
}

/// Multiplies the learning rate by `factor` each time the validation loss
/// has failed to improve for `patience` consecutive epochs, then restarts
/// the count.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    tracker: EarlyStopping,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr: initial_lr,
            factor,
            tracker: EarlyStopping::new(patience),
        }
    }

    pub fn observe(&mut self, loss: f64) -> f64 {
        self.tracker.observe(loss);
        if self.tracker.should_stop() {
            self.lr *= self.factor;
            self.tracker.stale = 0;
        }
        self.lr
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    pub val_er: Option<f64>,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub seconds: f64,
}

impl EpochRecord {
    /// Row matching [`CURVE_HEADER`]; an undefined error rate is `nan`.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{},{},{:.3}",
            self.epoch,
            self.train_loss,
            self.val_loss,
            self.val_f1,
            self.val_er.map_or_else(|| "nan".into(), |e| format!("{e:.6}")),
            self.lr,
            self.seconds
        )
    }
}

pub fn records_csv(records: &[EpochRecord]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for r in records {
        writeln!(out, "{}", r.csv_row()).expect("write to string");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub loss: f64,
    pub report: MetricsReport,
}

/// What [`fit`] drives: one pass over the training data and one validation.
pub trait Learner {
    type Snapshot;

    /// Trains one epoch at learning rate `lr` and returns the mean training loss.
    fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64>;
    fn validate(&mut self) -> Result<Validation>;
    fn snapshot(&self) -> Self::Snapshot;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
}

#[derive(Debug, Clone)]
pub struct FitOutcome<S> {
    pub records: Vec<EpochRecord>,
    pub best: S,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop: StopReason,
}

impl<S> FitOutcome<S> {
    pub fn epochs_run(&self) -> usize {
        self.records.len()
    }
}

/// Runs epochs `1..=max_epochs`, stopping early once the validation loss
/// has not improved for `patience` consecutive epochs. The snapshot taken
/// after the best validation epoch is returned.
pub fn fit<L: Learner>(
    learner: &mut L,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome<L::Snapshot>> {
    config.validate()?;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut scheduler = PlateauScheduler::new(config.initial_lr, config.lr_factor, config.lr_patience);
    let mut records = Vec::new();
    let mut best = None;
    let mut best_epoch = 0;
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let lr = scheduler.lr();
        let train_loss = learner.train_epoch(epoch, lr)?;
        if !train_loss.is_finite() {
            return Err(SedError::Divergence {
                epoch,
                what: "training loss",
            });
        }
        let val = learner.validate()?;
        if !val.loss.is_finite() {
            return Err(SedError::Divergence {
                epoch,
                what: "validation loss",
            });
        }
        if stopper.observe(val.loss) {
            best = Some(learner.snapshot());
            best_epoch = epoch;
        }
        scheduler.observe(val.loss);
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: val.loss,
            val_f1: val.report.f1(),
            val_er: val.report.error_rate(),
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        records.push(record);
        if stopper.should_stop() {
            break;
        }
    }
    let stop = if stopper.should_stop() {
        StopReason::EarlyStopping
    } else {
        StopReason::MaxEpochs
    };
    Ok(FitOutcome {
        records,
        best: best.expect("the first finite validation loss is always an improvement"),
        best_epoch,
        best_val_loss: stopper.best(),
        stop,
    })
}

/// A trained model with the feature standardization it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub model: Crnn,
    pub normalizer: Normalizer,
}

impl Detector {
    pub fn normalized(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        let mut f = features.clone();
        self.normalizer.apply(&mut f)?;
        Ok(f)
    }

    /// Frame-by-class probabilities for a whole recording, `n_frames x n_classes`.
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        let f = self.normalized(features)?;
        let input = Tensor::new(vec![1, f.n_frames(), f.n_mels()], f.values().to_vec())?;
        Ok(self.model.predict(&input)?.into_data())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut records = self.model.records();
        let n = self.normalizer.mean.len();
        records.push(("norm.mean".into(), Tensor::new(vec![n], self.normalizer.mean.clone())?));
        records.push(("norm.std".into(), Tensor::new(vec![n], self.normalizer.std.clone())?));
        let refs: Vec<(&str, &Tensor)> = records.iter().map(|(n, t)| (n.as_str(), t)).collect();
        checkpoint::save(path, CHECKPOINT_MAGIC, &refs)?;
        Ok(())
    }

    /// Loads a checkpoint written by [`Detector::save`]; a bare model
    /// checkpoint loads with identity normalization.
    pub fn load(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Self> {
        let records = checkpoint::load(path, CHECKPOINT_MAGIC)?;
        let model = Crnn::from_records(config, &records)?;
        let get = |name: &str| records.iter().find(|(n, _)| n == name).map(|(_, t)| t.data().to_vec());
        let normalizer = match (get("norm.mean"), get("norm.std")) {
            (Some(mean), Some(std)) if mean.len() == config.n_mels && std.len() == config.n_mels => {
                Normalizer { mean, std }
            }
            (None, None) => Normalizer::identity(config.n_mels),
            _ => return Err(SedError::Data("checkpoint normalizer does not match n_mels".into())),
        };
        Ok(Self { model, normalizer })
    }
}

struct Batch {
    input: Tensor,
    targets: Tensor,
    mask: Tensor,
}

fn stack(chunks: &[&Chunk], n_mels: usize, n_classes: usize) -> Result<Batch> {
    let (b, t) = (chunks.len(), chunks[0].frames());
    let mut input = Vec::with_capacity(b * t * n_mels);
    let mut targets = Vec::with_capacity(b * t * n_classes);
    let mut mask = Vec::with_capacity(b * t);
    for c in chunks {
        input.extend_from_slice(&c.features);
        targets.extend_from_slice(&c.targets);
        mask.extend_from_slice(&c.mask);
    }
    Ok(Batch {
        input: Tensor::new(vec![b, t, n_mels], input)?,
        targets: Tensor::new(vec![b, t, n_classes], targets)?,
        mask: Tensor::new(vec![b, t], mask)?,
    })
}

fn normalized_chunks(recordings: &[Recording], normalizer: &Normalizer, chunk_frames: usize) -> Result<Vec<Chunk>> {
    let mut out = Vec::new();
    for r in recordings {
        let mut f = r.features.clone();
        normalizer.apply(&mut f)?;
        out.extend(chunk_sequences(&f, &r.roll, chunk_frames)?);
    }
    Ok(out)
}

/// Eval-mode loss (mean BCE over valid cells) and frame metrics at
/// threshold 0.5, over pre-normalized chunks.
fn evaluate_chunks(model: &Crnn, chunks: &[Chunk], batch_size: usize) -> Result<Validation> {
    if chunks.is_empty() {
        return Err(SedError::Data("cannot evaluate on an empty dataset".into()));
    }
    let cfg = model.config();
    let (n_mels, n_classes) = (cfg.n_mels, cfg.n_classes);
    let mut loss_sum = 0.0;
    let mut cells = 0usize;
    let mut report = MetricsReport::default();
    for group in chunks.chunks(batch_size) {
        let refs: Vec<&Chunk> = group.iter().collect();
        let batch = stack(&refs, n_mels, n_classes)?;
        let probs = model.predict(&batch.input)?;
        let mut tape = Tape::new();
        let p = tape.constant(probs.clone());
        let loss = tape.bce_loss(p, &batch.targets, Some(&batch.mask))?;
        let valid: usize = group.iter().map(|c| c.valid).sum();
        loss_sum += tape.value(loss).item().expect("scalar loss") * (valid * n_classes) as f64;
        cells += valid * n_classes;
        let t = group[0].frames();
        for (i, c) in group.iter().enumerate() {
            let rows = i * t * n_classes..(i * t + c.valid) * n_classes;
            let estimate = EventRoll::binarize(&probs.data()[rows.clone()], n_classes, DECISION_THRESHOLD)?;
            let reference = EventRoll::binarize(&c.targets[..c.valid * n_classes], n_classes, DECISION_THRESHOLD)?;
            report = report.merge(&frame_metrics(&reference, &estimate)?);
        }
    }
    Ok(Validation {
        loss: loss_sum / cells as f64,
        report,
    })
}

/// Loss and metrics of `detector` on `recordings`, evaluated in eval mode
/// over `chunk_frames`-long chunks (the same segmentation used in training).
pub fn evaluate(detector: &Detector, recordings: &[Recording], chunk_frames: usize) -> Result<Validation> {
    if recordings.is_empty() {
        return Err(SedError::Data("cannot evaluate on an empty dataset".into()));
    }
    let chunks = normalized_chunks(recordings, &detector.normalizer, chunk_frames)?;
    evaluate_chunks(&detector.model, &chunks, 16)
}

/// [`Learner`] for a [`Crnn`] over chunked, standardized recordings.
pub struct CrnnLearner {
    model: Crnn,
    normalizer: Normalizer,
    optimizer: Adam,
    train: Vec<Chunk>,
    val: Vec<Chunk>,
    batch_size: usize,
    shuffle_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
}

impl CrnnLearner {
    /// Fits the normalizer on `train` and chunks both sets.
    pub fn new(model: Crnn, train: &[Recording], val: &[Recording], config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(SedError::Data("training and validation sets must be nonempty".into()));
        }
        let n_classes = model.config().n_classes;
        for r in train.iter().chain(val) {
            if r.roll.n_classes() != n_classes {
                return Err(SedError::Data(format!(
                    "{}: {} classes, model has {n_classes}",
                    r.name,
                    r.roll.n_classes()
                )));
            }
        }
        let normalizer = Normalizer::fit(train.iter().map(|r| &r.features))?;
        let train_chunks = normalized_chunks(train, &normalizer, config.chunk_frames)?;
        let val_chunks = normalized_chunks(val, &normalizer, config.chunk_frames)?;
        Ok(Self {
            model,
            normalizer,
            optimizer: Adam::new(config.initial_lr),
            train: train_chunks,
            val: val_chunks,
            batch_size: config.batch_size,
            shuffle_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1)),
            dropout_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2)),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.optimizer.step_count()
    }

    pub fn train_chunks(&self) -> usize {
        self.train.len()
    }

    pub fn detector(&self) -> Detector {
        Detector {
            model: self.model.clone(),
            normalizer: self.normalizer.clone(),
        }
    }
}

impl Learner for CrnnLearner {
    type Snapshot = Detector;

    fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64> {
        self.optimizer.set_learning_rate(lr);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let (n_mels, n_classes) = (self.model.config().n_mels, self.model.config().n_classes);
        let mut loss_sum = 0.0;
        let mut cells = 0usize;
        for idx in order.chunks(self.batch_size) {
            let refs: Vec<&Chunk> = idx.iter().map(|&i| &self.train[i]).collect();
            let batch = stack(&refs, n_mels, n_classes)?;
            let mut tape = Tape::new();
            let fwd = self.model.forward(&mut tape, &batch.input, Mode::Train, &mut self.dropout_rng)?;
            let loss = tape.bce_loss(fwd.output, &batch.targets, Some(&batch.mask))?;
            let value = tape.value(loss).item().expect("scalar loss");
            if !value.is_finite() {
                return Err(SedError::Divergence {
                    epoch,
                    what: "training loss",
                });
            }
            tape.backward(loss)?;
            let grads: Vec<Tensor> = fwd
                .params
                .iter()
                .map(|&v| tape.grad(v).expect("parameter gradient").clone())
                .collect();
            self.optimizer.step(self.model.params_mut(), &grads)?;
            let valid: usize = refs.iter().map(|c| c.valid).sum();
            loss_sum += value * (valid * n_classes) as f64;
            cells += valid * n_classes;
        }
        Ok(loss_sum / cells as f64)
    }

    fn validate(&mut self) -> Result<Validation> {
        evaluate_chunks(&self.model, &self.val, self.batch_size)
    }

    fn snapshot(&self) -> Detector {
        self.detector()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model after the epoch with the lowest validation loss.
    pub best: Detector,
    /// Model after the final epoch.
    pub last: Detector,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop: StopReason,
}

/// Builds a model from `model_config` (initialized from the run seed) and
/// trains it on `train`, selecting the epoch with the lowest loss on `val`.
pub fn train(
    model_config: &ModelConfig,
    train: &[Recording],
    val: &[Recording],
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let model = Crnn::new(model_config, derive_seed(config.seed, 0))?;
    let mut learner = CrnnLearner::new(model, train, val, config)?;
    let outcome = fit(&mut learner, config, on_epoch)?;
    Ok(TrainOutcome {
        best: outcome.best,
        last: learner.detector(),
        records: outcome.records,
        best_epoch: outcome.best_epoch,
        stop: outcome.stop,
    })
}
