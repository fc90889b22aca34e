//! Layer building blocks shared by the growth and pruning networks.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{Mode, ParamId, ParamStore, RunningStats, Tape, Tensor, Var};

/// A trainable classifier built on the tape engine.
pub trait Network: Send {
    /// Logits `[N, num_classes]` for a `[N, C, H, W]` input.
    fn forward(&mut self, tape: &mut Tape, input: Var, mode: Mode) -> Result<Var>;

    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    fn ledger(&self) -> ParamLedger;

    /// η: parameter count, excluding entries removed by pruning.
    fn eta(&self) -> u64 {
        let masked = self.params().total_count() - self.params().active_count();
        self.ledger().total() - masked as u64
    }

    /// Set the softmax temperature multiplier of trainable neuron layers.
    fn set_neuron_scale(&mut self, _scale: f32) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerKind {
    Conv,
    BatchNorm,
    NeuronLayer,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerItem {
    pub name: String,
    pub kind: LedgerKind,
    pub count: u64,
    /// `(n_in, n_out, K)` for convolutions.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub conv: Option<(usize, usize, usize)>,
}

/// Itemized parameter count.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLedger {
    pub items: Vec<LedgerItem>,
}

impl ParamLedger {
    pub fn push_conv(&mut self, name: impl Into<String>, n_in: usize, n_out: usize, k: usize) {
        self.items.push(LedgerItem {
            name: name.into(),
            kind: LedgerKind::Conv,
            count: (n_in * n_out * k * k) as u64,
            conv: Some((n_in, n_out, k)),
        });
    }

    pub fn push(&mut self, name: impl Into<String>, kind: LedgerKind, count: usize) {
        self.items.push(LedgerItem {
            name: name.into(),
            kind,
            count: count as u64,
            conv: None,
        });
    }

    pub fn total(&self) -> u64 {
        self.items.iter().map(|i| i.count).sum()
    }

    pub fn total_of(&self, kind: LedgerKind) -> u64 {
        self.items.iter().filter(|i| i.kind == kind).map(|i| i.count).sum()
    }

    pub fn conv_total(&self) -> u64 {
        self.total_of(LedgerKind::Conv)
    }
}

/// Bias-free same-padded convolution.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub n_in: usize,
    pub n_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        k: usize,
        stride: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let weight = store.add_fan_in_uniform(format!("{name}.weight"), &[n_out, n_in, k, k], n_in * k * k, rng);
        ConvLayer { weight, n_in, n_out, k, stride }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        tape.conv2d(x, w, self.stride)
    }

    pub fn param_count(&self) -> usize {
        self.n_in * self.n_out * self.k * self.k
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub stats: RunningStats,
}

impl BatchNormLayer {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNormLayer {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            channels,
            stats: RunningStats::new(channels),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.batch_norm(x, g, b, &mut self.stats, mode)
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl DenseLayer {
    pub fn new(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, rng: &mut SeededRng) -> Self {
        use rand::Rng;
        let bound = 1.0 / (n_in.max(1) as f32).sqrt();
        let w = (0..n_in * n_out).map(|_| rng.gen_range(-bound..bound)).collect();
        DenseLayer {
            weight: store.add(format!("{name}.weight"), Tensor::new(vec![n_in, n_out], w).expect("sized")),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[n_out])),
            n_in,
            n_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.dense(x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.n_in * self.n_out + self.n_out
    }
}
