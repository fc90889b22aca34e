//! Max and coincidence neuron models and the layers that host them.
//!
//! Both models take two inputs. The first is the layer activation `x1`; the
//! second, `x2`, is the same activation rotated by one position (feature axis
//! for dense layers, both spatial axes for convolutions). A neuron "fires"
//! when its output is above zero.
//!
//! * coincidence: `ReLU(x1) · ReLU(tanh(x2))` fires only if both inputs fire.
//! * max: `ReLU(x1) + ReLU(−x1) · ReLU(tanh(x2))` fires if either input fires,
//!   and is exactly linear in `x1` with unit slope while `x1 > 0`.

use serde::{Deserialize, Serialize};

use crate::apportion::largest_remainder;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, ShiftKind, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NeuronKind {
    #[serde(rename = "relu")]
    Conventional,
    #[serde(rename = "max")]
    Max,
    #[serde(rename = "coincidence")]
    Coincidence,
}

impl NeuronKind {
    pub const ALL: [NeuronKind; 3] = [NeuronKind::Conventional, NeuronKind::Max, NeuronKind::Coincidence];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            NeuronKind::Conventional => "relu",
            NeuronKind::Max => "max",
            NeuronKind::Coincidence => "coincidence",
        }
    }

    pub(crate) fn response_fn(self) -> fn(f32, f32) -> f32 {
        match self {
            NeuronKind::Conventional => |a, _| a.max(0.0),
            NeuronKind::Max => max_neuron,
            NeuronKind::Coincidence => coincidence,
        }
    }

    pub(crate) fn grad_fn(self) -> fn(f32, f32) -> (f32, f32) {
        match self {
            NeuronKind::Conventional => |a, _| (if a > 0.0 { 1.0 } else { 0.0 }, 0.0),
            NeuronKind::Max => max_neuron_grad,
            NeuronKind::Coincidence => coincidence_grad,
        }
    }
}

impl std::fmt::Display for NeuronKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[inline]
fn relu(v: f32) -> f32 {
    v.max(0.0)
}

#[inline]
pub fn coincidence(x1: f32, x2: f32) -> f32 {
    relu(x1) * relu(x2.tanh())
}

#[inline]
pub fn max_neuron(x1: f32, x2: f32) -> f32 {
    relu(x1) + relu(-x1) * relu(x2.tanh())
}

/// `(∂y/∂x1, ∂y/∂x2)` of the coincidence response.
#[inline]
pub fn coincidence_grad(x1: f32, x2: f32) -> (f32, f32) {
    let t = x2.tanh();
    let d1 = if x1 > 0.0 { relu(t) } else { 0.0 };
    let d2 = if t > 0.0 { relu(x1) * (1.0 - t * t) } else { 0.0 };
    (d1, d2)
}

/// `(∂y/∂x1, ∂y/∂x2)` of the max response.
#[inline]
pub fn max_neuron_grad(x1: f32, x2: f32) -> (f32, f32) {
    let t = x2.tanh();
    let d1 = if x1 > 0.0 {
        1.0
    } else if x1 < 0.0 {
        -relu(t)
    } else {
        0.0
    };
    let d2 = if t > 0.0 { relu(-x1) * (1.0 - t * t) } else { 0.0 };
    (d1, d2)
}

fn elementwise(op: &'static str, x1: &Tensor, x2: &Tensor, f: fn(f32, f32) -> f32) -> Result<Tensor> {
    if x1.shape() != x2.shape() {
        return Err(Error::shape(op, x1.shape(), x2.shape()));
    }
    let data = x1.data().iter().zip(x2.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(x1.shape().to_vec(), data)
}

pub fn coincidence_response(x1: &Tensor, x2: &Tensor) -> Result<Tensor> {
    elementwise("coincidence_response", x1, x2, coincidence)
}

pub fn max_response(x1: &Tensor, x2: &Tensor) -> Result<Tensor> {
    elementwise("max_response", x1, x2, max_neuron)
}

/// Circularly rotate `x` by one along the feature axis (dense) or both
/// spatial axes (conv). Shape is preserved.
pub fn shift_second_input(x: &Tensor, kind: ShiftKind) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let s = tape.shift(v, kind)?;
    Ok(tape.value(s).clone())
}

/// Per-channel softmax mixture of the three neuron responses.
///
/// Holds `3·C` weights stored as a `[3, C]` parameter; row `k` is the
/// branch weight of [`NeuronKind::ALL`]`[k]`. The weights are multiplied by
/// `scale` inside the softmax.
#[derive(Debug, Clone)]
pub struct TrainableNeuronLayer {
    pub weights: ParamId,
    pub channels: usize,
    pub scale: f32,
    pub shift: ShiftKind,
}

impl TrainableNeuronLayer {
    pub const DEFAULT_SCALE: f32 = 10.0;

    /// Register zero-initialized branch weights (uniform mixture).
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, shift: ShiftKind) -> Self {
        let weights = store.add(format!("{name}.w_tl"), Tensor::zeros(&[3, channels]));
        TrainableNeuronLayer {
            weights,
            channels,
            scale: Self::DEFAULT_SCALE,
            shift,
        }
    }

    pub fn weight_count(&self) -> usize {
        3 * self.channels
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let c = tape.value(x).channels()?;
        if c != self.channels {
            return Err(Error::shape("trainable_neuron_layer", &[self.channels], &[c]));
        }
        let x2 = tape.shift(x, self.shift)?;
        let branches = [tape.relu(x), tape.max_neuron(x, x2)?, tape.coincidence(x, x2)?];
        let w = tape.param(store, self.weights);
        let scaled = tape.scale(w, self.scale);
        let mix = tape.softmax(scaled, 0)?;
        let mut out: Option<Var> = None;
        for (k, branch) in branches.into_iter().enumerate() {
            let s = tape.row(mix, k)?;
            let term = tape.channel_scale(branch, s)?;
            out = Some(match out {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        Ok(out.expect("three branches"))
    }

    /// Softmax branch probabilities per channel, `[channel][kind]`.
    pub fn branch_probabilities(&self, store: &ParamStore) -> Vec<[f64; 3]> {
        let w = store.get(self.weights).data();
        let c = self.channels;
        (0..c)
            .map(|ch| {
                let z: Vec<f64> = (0..3).map(|k| (self.scale * w[k * c + ch]) as f64).collect();
                let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
                let total: f64 = e.iter().sum();
                [e[0] / total, e[1] / total, e[2] / total]
            })
            .collect()
    }
}

/// Hard per-channel neuron assignment with a pruning mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunableNeuronLayer {
    kinds: Vec<NeuronKind>,
    pruned: Vec<bool>,
    pub shift: ShiftKind,
}

impl PrunableNeuronLayer {
    /// Contiguous blocks `[Conventional, Max, Coincidence]` sized by
    /// largest-remainder rounding of `fractions`.
    pub fn from_fractions(channels: usize, fractions: [f64; 3], shift: ShiftKind) -> Result<Self> {
        let counts = largest_remainder(&fractions, channels)?;
        let kinds = NeuronKind::ALL
            .iter()
            .zip(&counts)
            .flat_map(|(&k, &n)| std::iter::repeat(k).take(n))
            .collect();
        Ok(PrunableNeuronLayer {
            kinds,
            pruned: vec![false; channels],
            shift,
        })
    }

    /// One third of the channels per kind.
    pub fn equal_thirds(channels: usize, shift: ShiftKind) -> Self {
        let third = 1.0 / 3.0;
        Self::from_fractions(channels, [third; 3], shift).expect("thirds sum to one")
    }

    pub fn from_kinds(kinds: Vec<NeuronKind>, shift: ShiftKind) -> Self {
        let n = kinds.len();
        PrunableNeuronLayer {
            kinds,
            pruned: vec![false; n],
            shift,
        }
    }

    pub fn channels(&self) -> usize {
        self.kinds.len()
    }

    pub fn kinds(&self) -> &[NeuronKind] {
        &self.kinds
    }

    pub fn kind(&self, channel: usize) -> NeuronKind {
        self.kinds[channel]
    }

    pub fn is_pruned(&self, channel: usize) -> bool {
        self.pruned[channel]
    }

    pub fn pruned_mask(&self) -> &[bool] {
        &self.pruned
    }

    pub fn prune(&mut self, channel: usize) -> Result<()> {
        match self.pruned.get_mut(channel) {
            Some(p) => {
                *p = true;
                Ok(())
            }
            None => Err(Error::InvalidArgument(format!(
                "channel {channel} out of range for {} channels",
                self.kinds.len()
            ))),
        }
    }

    pub fn kind_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for k in &self.kinds {
            c[k.index()] += 1;
        }
        c
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let c = tape.value(x).channels()?;
        if c != self.kinds.len() {
            return Err(Error::Validation(format!(
                "prunable layer assigns {} channels but input has {c}",
                self.kinds.len()
            )));
        }
        let x2 = tape.shift(x, self.shift)?;
        let active: Vec<bool> = self.pruned.iter().map(|p| !p).collect();
        tape.neuron_select(x, x2, &self.kinds, &active)
    }
}
