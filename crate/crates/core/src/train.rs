//! Mini-batch training loop and evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ImageDataset;
use crate::error::{GcnError, Result};
use crate::network::{softmax_cross_entropy, Network};
use crate::optim::Optimizer;

fn default_batch_size() -> usize {
    128
}

fn default_initial_lr() -> f64 {
    0.001
}

fn default_weight_decay() -> f64 {
    5e-5
}

fn default_halving_period() -> usize {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_initial_lr")]
    pub initial_lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Epochs between learning-rate halvings.
    #[serde(default = "default_halving_period")]
    pub halving_period: usize,
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            batch_size: default_batch_size(),
            initial_lr: default_initial_lr(),
            weight_decay: default_weight_decay(),
            halving_period: default_halving_period(),
            epochs: 15,
            optimizer: Optimizer::default(),
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.halving_period == 0 {
            return Err(GcnError::Config(
                "batch_size and halving_period must be positive".into(),
            ));
        }
        let lr_ok = self.initial_lr > 0.0 && self.initial_lr.is_finite();
        let wd_ok = self.weight_decay >= 0.0 && self.weight_decay.is_finite();
        if !lr_ok || !wd_ok {
            return Err(GcnError::Config(format!(
                "need initial_lr > 0 and weight_decay >= 0, got {} and {}",
                self.initial_lr, self.weight_decay
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.initial_lr * 0.5f64.powi((epoch / self.halving_period) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean mini-batch loss over the epoch (with dropout active).
    pub train_loss: f64,
    pub val_error: f64,
    pub seconds: f64,
}

/// Owns a network and the random stream used for shuffling and dropout.
#[derive(Debug, Clone)]
pub struct Trainer {
    net: Network,
    schedule: TrainSchedule,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(net: Network, schedule: TrainSchedule, seed: u64) -> Result<Self> {
        schedule.validate()?;
        Ok(Trainer {
            net,
            schedule,
            rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: 0,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn schedule(&self) -> &TrainSchedule {
        &self.schedule
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass over `train` in a freshly shuffled order, then evaluation on `val`.
    pub fn train_epoch(&mut self, train: &ImageDataset, val: &ImageDataset) -> Result<EpochMetrics> {
        if train.is_empty() {
            return Err(GcnError::EmptyDataset);
        }
        let start = Instant::now();
        let lr = self.schedule.lr_at(self.epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(self.schedule.batch_size) {
            let (x, y) = train.batch(idx);
            let (loss, grads) = self.net.loss_and_grad(&x, &y, Some(&mut self.rng))?;
            self.net
                .apply_grads(&grads, &self.schedule.optimizer, lr, self.schedule.weight_decay)?;
            loss_sum += loss;
            batches += 1;
        }
        let val_error = if val.is_empty() {
            f64::NAN
        } else {
            evaluate(&self.net, val)?
        };
        self.epoch += 1;
        Ok(EpochMetrics {
            epoch: self.epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            val_error,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

const EVAL_BATCH: usize = 256;

/// Fraction of misclassified samples.
pub fn evaluate(net: &Network, dataset: &ImageDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(GcnError::EmptyDataset);
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut wrong = 0;
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, y) = dataset.batch(chunk);
        wrong += net.predict(&x)?.iter().zip(&y).filter(|(p, t)| p != t).count();
    }
    Ok(wrong as f64 / dataset.len() as f64)
}

/// Mean cross-entropy without dropout.
pub fn mean_loss(net: &Network, dataset: &ImageDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(GcnError::EmptyDataset);
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, y) = dataset.batch(chunk);
        let (loss, _, _) = softmax_cross_entropy(&net.forward_pass(&x)?, &y)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / dataset.len() as f64)
}
