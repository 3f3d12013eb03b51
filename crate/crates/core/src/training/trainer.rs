use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{weighted_dice_loss, DiceLossConfig};
use crate::data_io::{augment, Sample};
use crate::error::{LfaError, Result};
use crate::evalx::{confusion_counts, metrics, ConfusionCounts, MetricsReport, DEFAULT_THRESHOLD};
use crate::model::{model_forward, Model, SPATIAL_MULTIPLE};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of the manifest used for training; 1 disables validation.
    pub split_fraction: f64,
    /// Save a checkpoint every this many epochs; 0 saves only at the end.
    pub checkpoint_every: usize,
    /// Square extent samples are resized to.
    pub input_size: usize,
    pub augment: bool,
    pub threshold: f32,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            batch_size: 8,
            epochs: 50,
            seed: 7,
            split_fraction: 0.8,
            checkpoint_every: 0,
            input_size: 512,
            augment: false,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(LfaError::config("batch_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.split_fraction) {
            return Err(LfaError::config(format!(
                "split fraction {} outside [0, 1]",
                self.split_fraction
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(LfaError::config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(SPATIAL_MULTIPLE) {
            return Err(LfaError::config(format!(
                "input size {} must be a positive multiple of {SPATIAL_MULTIPLE}",
                self.input_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    /// Dice of the train-mode outputs seen during the epoch.
    pub train_dice: f64,
    pub val_dice: Option<f64>,
}

impl EpochStats {
    pub const LOG_HEADER: &'static str = "epoch, mean_loss, train_dice, val_dice";

    pub fn log_line(&self) -> String {
        let val = self.val_dice.map_or_else(|| "-".to_string(), |d| format!("{d:.6}"));
        format!("{}, {:.6}, {:.6}, {}", self.epoch, self.mean_loss, self.train_dice, val)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub counts: ConfusionCounts,
    pub mean_loss: f64,
    pub metrics: MetricsReport,
}

/// Inference-mode loss and pooled confusion counts over `samples`.
pub fn evaluate(model: &Model, samples: &[Sample], loss_cfg: &DiceLossConfig, threshold: f32) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(LfaError::Data("nothing to evaluate".into()));
    }
    let mut counts = ConfusionCounts::default();
    let mut loss = 0.0;
    for s in samples {
        let p = model_forward(model, &s.image, Mode::Infer, None)?;
        loss += weighted_dice_loss(&p, &s.mask, loss_cfg)?.0;
        counts += confusion_counts(&p, &s.mask, threshold)?;
    }
    Ok(Evaluation {
        counts,
        mean_loss: loss / samples.len() as f64,
        metrics: metrics(&counts)?,
    })
}

/// Owns the model, optimizer state and the single random stream used for
/// shuffling, augmentation and dropout.
pub struct Trainer {
    pub model: Model,
    pub optimizer: AdamState,
    pub run: TrainRunConfig,
    pub loss: DiceLossConfig,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, run: TrainRunConfig, loss: DiceLossConfig, adam: AdamConfig) -> Result<Self> {
        let optimizer = AdamState::new(&model.params, adam)?;
        Self::resume(model, optimizer, run, loss)
    }

    /// Continues from saved optimizer state.
    pub fn resume(model: Model, optimizer: AdamState, run: TrainRunConfig, loss: DiceLossConfig) -> Result<Self> {
        run.validate()?;
        loss.validate()?;
        optimizer.config.validate()?;
        if optimizer.m.len() != model.params.len() {
            return Err(LfaError::shape("optimizer state does not match the model"));
        }
        let rng = ChaCha8Rng::seed_from_u64(run.seed);
        Ok(Trainer {
            model,
            optimizer,
            run,
            loss,
            rng,
            epoch: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One forward/backward/update on a stacked batch. Returns the loss and
    /// the batch's confusion counts.
    pub fn step(&mut self, images: &Tensor, masks: &Tensor) -> Result<(f64, ConfusionCounts)> {
        let (probs, loss, counts, param_grads, updates) = {
            let mut tape = Tape::new(&self.model.params, Mode::Train).with_rng(&mut self.rng);
            let x = tape.constant(images.clone());
            let y = self.model.forward(&mut tape, x)?;
            let probs = tape.value(y).clone();
            let (loss, seed) = weighted_dice_loss(&probs, masks, &self.loss)?;
            if !loss.is_finite() {
                return Err(LfaError::Evaluation(format!("non-finite loss {loss}")));
            }
            let counts = confusion_counts(&probs, masks, self.run.threshold)?;
            let grads = tape.backward(y, seed)?;
            let updates = tape.take_stats_updates();
            (probs, loss, counts, grads.into_param_grads(&self.model.params), updates)
        };
        drop(probs);
        adam_step(&mut self.model.params, &param_grads, &mut self.optimizer)?;
        self.model.params.apply_stats_updates(&updates);
        Ok((loss, counts))
    }

    /// Shuffles `train`, runs every batch, then scores `val` (if any) in
    /// inference mode.
    pub fn epoch(&mut self, train: &[Sample], val: &[Sample]) -> Result<EpochStats> {
        if train.is_empty() {
            return Err(LfaError::Data("no training samples".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total_loss = 0.0;
        let mut counts = ConfusionCounts::default();
        for chunk in order.chunks(self.run.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    if self.run.augment {
                        augment(&train[i], &mut self.rng)
                    } else {
                        train[i].clone()
                    }
                })
                .collect();
            let images = Tensor::stack(&batch.iter().map(|s| &s.image).collect::<Vec<_>>())?;
            let masks = Tensor::stack(&batch.iter().map(|s| &s.mask).collect::<Vec<_>>())?;
            let (loss, c) = self.step(&images, &masks)?;
            total_loss += loss * chunk.len() as f64;
            counts += c;
        }
        self.epoch += 1;
        let val_dice = if val.is_empty() {
            None
        } else {
            Some(evaluate(&self.model, val, &self.loss, self.run.threshold)?.metrics.dice)
        };
        Ok(EpochStats {
            epoch: self.epoch,
            mean_loss: total_loss / train.len() as f64,
            train_dice: metrics(&counts)?.dice,
            val_dice,
        })
    }
}

pub fn train_epoch(trainer: &mut Trainer, train: &[Sample], val: &[Sample]) -> Result<EpochStats> {
    trainer.epoch(train, val)
}
