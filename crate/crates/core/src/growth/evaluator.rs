use rand::Rng;

use crate::arch::{materialize, spec_ledger, NetworkSpec};
use crate::error::Result;
use crate::rng::{derive_seed, seeded};
use crate::train::{train_and_eval, Dataset, TrainConfig};

/// Accuracy and parameter count of one evaluated architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub alpha: f64,
    pub eta: u64,
}

/// Scores architectures for the growth search. Must be deterministic for a
/// fixed `(spec, seed)`.
pub trait Evaluator {
    fn evaluate(&mut self, spec: &NetworkSpec, seed: u64) -> Result<Evaluation>;
}

/// Trains each architecture from scratch on a dataset.
pub struct TrainingEvaluator<'a> {
    pub dataset: &'a Dataset,
    pub config: TrainConfig,
}

impl Evaluator for TrainingEvaluator<'_> {
    fn evaluate(&mut self, spec: &NetworkSpec, seed: u64) -> Result<Evaluation> {
        let mut net = materialize(spec, derive_seed(seed, 0))?;
        let config = TrainConfig { seed: derive_seed(seed, 1), ..self.config.clone() };
        let report = train_and_eval(&mut net, self.dataset, &config)?;
        Ok(Evaluation { alpha: report.alpha, eta: report.eta })
    }
}

/// Training-free stand-in: accuracy saturates with operation count and
/// parameter count, plus seeded noise. For exercising the search machinery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateEvaluator {
    /// Half-width of the uniform accuracy noise.
    pub noise: f64,
}

impl Default for SurrogateEvaluator {
    fn default() -> Self {
        SurrogateEvaluator { noise: 0.02 }
    }
}

impl Evaluator for SurrogateEvaluator {
    fn evaluate(&mut self, spec: &NetworkSpec, seed: u64) -> Result<Evaluation> {
        let eta = spec_ledger(spec)?.total();
        let ops = spec.op_count() as f64;
        let capacity = 1.0 - (-ops / 30.0).exp();
        let size = (eta as f64).ln() / 20.0;
        let jitter = if self.noise > 0.0 { seeded(seed).gen_range(-self.noise..self.noise) } else { 0.0 };
        let alpha = (0.3 + 0.5 * capacity + 0.1 * size + jitter).clamp(0.01, 1.0);
        Ok(Evaluation { alpha, eta })
    }
}
