use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Network;
use crate::rng::{seeded, SeededRng};
use crate::tensor::{lr_schedule, sgd_step, Mode, OptimState, Tape};

use super::dataset::Dataset;

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Total optimizer steps N_S.
    pub steps: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Multiplier applied to trainable neuron layer weights before the softmax.
    pub neuron_scale: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3900,
            batch_size: 128,
            base_lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            neuron_scale: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, train_len: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > train_len {
            return Err(Error::InvalidArgument(format!(
                "batch size {} must be in 1..={train_len} (training split size)",
                self.batch_size
            )));
        }
        if !(self.base_lr > 0.0) || !(self.momentum >= 0.0) || !(self.weight_decay >= 0.0) || !(self.neuron_scale > 0.0) {
            return Err(Error::InvalidArgument(format!("non-positive optimizer settings in {self:?}")));
        }
        Ok(())
    }

    /// Passes over the training split implied by `steps`.
    pub fn epochs(&self, train_len: usize) -> usize {
        (self.steps * self.batch_size).div_ceil(train_len.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Top-1 accuracy on the eval split.
    pub alpha: f64,
    pub eta: u64,
    /// Loss of the last step, if any step ran.
    pub final_loss: Option<f64>,
}

/// Fixed-size minibatches drawn from per-epoch shuffles of the training split.
pub(crate) struct Batcher {
    indices: Vec<usize>,
    cursor: usize,
    batch: usize,
    rng: SeededRng,
}

impl Batcher {
    pub(crate) fn new(ds: &Dataset, batch: usize, seed: u64) -> Self {
        let mut b = Batcher { indices: ds.train_indices().to_vec(), cursor: 0, batch, rng: seeded(seed) };
        b.indices.shuffle(&mut b.rng);
        b
    }

    pub(crate) fn next_batch(&mut self) -> &[usize] {
        if self.cursor + self.batch > self.indices.len() {
            self.indices.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = &self.indices[self.cursor..self.cursor + self.batch];
        self.cursor += self.batch;
        out
    }
}

/// Run `steps` SGD steps with learning rate `lr_at(step)`; returns the last loss.
pub(crate) fn run_sgd(
    net: &mut dyn Network,
    ds: &Dataset,
    batcher: &mut Batcher,
    optim: &mut OptimState,
    steps: usize,
    mut lr_at: impl FnMut(usize) -> Result<f64>,
) -> Result<Option<f64>> {
    let mut last = None;
    for step in 0..steps {
        optim.set_lr(lr_at(step)?)?;
        let (x, labels) = ds.batch(batcher.next_batch());
        let mut tape = Tape::new();
        let input = tape.leaf(x);
        let logits = net.forward(&mut tape, input, Mode::Train)?;
        let loss = tape.cross_entropy(logits, &labels)?;
        let value = tape.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::Numerical(format!("loss is {value} at step {step}")));
        }
        let grads = tape.backward(loss)?;
        net.params_mut().clear_grads();
        grads.apply_to(net.params_mut())?;
        sgd_step(net.params_mut(), optim)?;
        last = Some(value);
    }
    Ok(last)
}

/// Train with the step-decay schedule, then measure eval accuracy.
pub fn train_and_eval(net: &mut dyn Network, ds: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate(ds.train_indices().len())?;
    net.set_neuron_scale(config.neuron_scale);
    let mut optim = OptimState::new(net.params(), config.base_lr, config.momentum, config.weight_decay)?;
    let mut batcher = Batcher::new(ds, config.batch_size, config.seed);
    let final_loss = run_sgd(net, ds, &mut batcher, &mut optim, config.steps, |s| {
        lr_schedule(s, config.steps, config.base_lr)
    })?;
    Ok(TrainReport { alpha: evaluate(net, ds)?, eta: net.eta(), final_loss })
}

/// Continue training at fixed learning rates, one entry per epoch.
///
/// `steps_per_epoch` defaults to one pass over the training split.
pub fn finetune(
    net: &mut dyn Network,
    ds: &Dataset,
    config: &TrainConfig,
    epoch_lrs: &[f64],
    steps_per_epoch: Option<usize>,
    seed: u64,
) -> Result<()> {
    let train_len = ds.train_indices().len();
    config.validate(train_len)?;
    let per_epoch = steps_per_epoch.unwrap_or(train_len / config.batch_size);
    let mut optim = OptimState::new(net.params(), config.base_lr, config.momentum, config.weight_decay)?;
    let mut batcher = Batcher::new(ds, config.batch_size, seed);
    for &lr in epoch_lrs {
        run_sgd(net, ds, &mut batcher, &mut optim, per_epoch, |_| Ok(lr))?;
    }
    Ok(())
}

/// Top-1 accuracy over the eval split, in eval mode.
pub fn evaluate(net: &mut dyn Network, ds: &Dataset) -> Result<f64> {
    let eval = ds.eval_indices();
    if eval.is_empty() {
        return Err(Error::InvalidArgument(format!("dataset `{}` has an empty eval split", ds.name)));
    }
    let mut correct = 0usize;
    for chunk in eval.chunks(EVAL_BATCH) {
        let (x, labels) = ds.batch(chunk);
        let mut tape = Tape::new();
        let input = tape.leaf(x);
        let logits = net.forward(&mut tape, input, Mode::Eval)?;
        let out = tape.value(logits);
        let m = out.shape()[1];
        for (row, &label) in out.data().chunks(m).zip(&labels) {
            let mut best = 0;
            for j in 1..m {
                if row[j] > row[best] {
                    best = j;
                }
            }
            correct += (best == label) as usize;
        }
    }
    Ok(correct as f64 / eval.len() as f64)
}
