use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::importance::{prune_step, PruneEvent};
use super::resnet::ResNet;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::train::{evaluate, finetune, Dataset, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    pub n_iter: usize,
    pub delta_alpha_max: f64,
    /// Neurons removed per iteration.
    pub n_r: usize,
    /// Fine-tuning learning rate of each epoch after a prune.
    pub finetune_lrs: Vec<f64>,
    /// Steps per fine-tuning epoch; `None` = one pass over the training split.
    pub steps_per_epoch: Option<usize>,
    /// Batch size, momentum and weight decay for fine-tuning.
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            n_iter: 1000,
            delta_alpha_max: 0.02,
            n_r: 1,
            finetune_lrs: vec![2e-3, 4e-4],
            steps_per_epoch: None,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_r == 0 {
            return Err(Error::InvalidArgument("n_r must be positive".into()));
        }
        if !(self.delta_alpha_max >= 0.0) {
            return Err(Error::InvalidArgument(format!("delta_alpha_max {} must be >= 0", self.delta_alpha_max)));
        }
        if self.finetune_lrs.iter().any(|&lr| !(lr > 0.0)) {
            return Err(Error::InvalidArgument(format!("fine-tune rates {:?} must be positive", self.finetune_lrs)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRecord {
    pub iteration: usize,
    pub event: PruneEvent,
    /// Accuracy after fine-tuning.
    pub alpha: f64,
    /// False when this iteration broke the accuracy bound and was rolled back.
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneStop {
    Iterations,
    AccuracyDrop,
    Exhausted,
}

pub struct PruneOutcome {
    /// Last network that satisfied the accuracy bound.
    pub network: ResNet,
    pub alpha0: f64,
    pub alpha: f64,
    pub history: Vec<PruneRecord>,
    pub stop: PruneStop,
}

/// Prune, fine-tune, evaluate; repeat until `n_iter` iterations or the
/// accuracy falls below `α₀ − Δα_max`, in which case the previous network is
/// returned.
pub fn pruning_search(net: ResNet, dataset: &Dataset, config: &PruneConfig) -> Result<PruneOutcome> {
    if dataset.train_indices().is_empty() || dataset.eval_indices().is_empty() {
        return Err(Error::InvalidArgument(format!("dataset `{}` needs non-empty train and eval splits", dataset.name)));
    }
    let mut net = net;
    let alpha0 = evaluate(&mut net, dataset)?;
    pruning_search_with(net, alpha0, config, &mut |n: &mut ResNet, iteration: usize| {
        let seed = derive_seed(config.seed, iteration as u64);
        finetune(n, dataset, &config.train, &config.finetune_lrs, config.steps_per_epoch, seed)?;
        evaluate(n, dataset)
    })
}

/// [`pruning_search`] with a caller-supplied fine-tune-and-evaluate step.
pub fn pruning_search_with(
    net: ResNet,
    alpha0: f64,
    config: &PruneConfig,
    finetune_eval: &mut dyn FnMut(&mut ResNet, usize) -> Result<f64>,
) -> Result<PruneOutcome> {
    config.validate()?;
    let floor = alpha0 - config.delta_alpha_max;
    let mut accepted = net;
    let mut alpha = alpha0;
    let mut history = Vec::new();
    let mut stop = PruneStop::Iterations;
    for iteration in 0..config.n_iter {
        let mut candidate = accepted.clone();
        let mut events = Vec::with_capacity(config.n_r);
        for _ in 0..config.n_r {
            match prune_step(&mut candidate) {
                Ok(e) => events.push(e),
                Err(Error::Search(_)) => break,
                Err(e) => return Err(e),
            }
        }
        if events.is_empty() {
            stop = PruneStop::Exhausted;
            break;
        }
        let a = finetune_eval(&mut candidate, iteration)?;
        let ok = a >= floor;
        history.extend(events.into_iter().map(|event| PruneRecord { iteration, event, alpha: a, accepted: ok }));
        if !ok {
            stop = PruneStop::AccuracyDrop;
            break;
        }
        accepted = candidate;
        alpha = a;
    }
    Ok(PruneOutcome { network: accepted, alpha0, alpha, history, stop })
}

pub const PRUNE_CSV_HEADER: &str = "iteration,stack,block,op,layer,channel,kind,phi,alpha,eta,accepted";

pub fn prune_history_csv(history: &[PruneRecord]) -> String {
    let mut out = String::from(PRUNE_CSV_HEADER);
    out.push('\n');
    for r in history {
        let e = &r.event;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            e.site.stack,
            e.site.block,
            e.site.op,
            e.neuron.layer,
            e.neuron.channel,
            e.kind,
            e.phi,
            r.alpha,
            e.eta_after,
            r.accepted
        );
    }
    out
}

pub fn write_prune_history(path: &Path, history: &[PruneRecord]) -> Result<()> {
    std::fs::write(path, prune_history_csv(history)).map_err(|e| Error::io(path, e))
}
