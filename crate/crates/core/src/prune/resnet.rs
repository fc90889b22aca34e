use serde::{Deserialize, Serialize};

use crate::apportion::largest_remainder;
use crate::error::{Error, Result};
use crate::model::{BatchNormLayer, ConvLayer, DenseLayer, LedgerKind, Network, ParamLedger};
use crate::neuron::PrunableNeuronLayer;
use crate::rng::seeded;
use crate::tensor::{Mode, ParamStore, ShiftKind, Tape, Var};

/// Kernel sizes the op-kind fractions range over.
pub const KERNELS: [usize; 4] = [1, 3, 5, 7];

const FRACTION_TOL: f64 = 1e-9;

/// Residual network with prunable neuron layers.
///
/// A 3×3 stem convolution, three stacks of residual blocks, global average
/// pooling and a linear classifier. Each block is two ops
/// (batch norm → prunable neuron layer → convolution) plus a shortcut; the
/// first block of stacks 2 and 3 reduces resolution with a stride-2 first op
/// and a stride-2 1×1 projection shortcut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResNetSpec {
    /// Residual blocks per stack.
    pub blocks: [usize; 3],
    pub stack_filters: [usize; 3],
    /// Per-stack fractions over [`KERNELS`]; `None` means all 3×3.
    pub op_fractions: Option<[[f64; 4]; 3]>,
    /// Per-stack fractions over (conventional, max, coincidence).
    pub neuron_fractions: [[f64; 3]; 3],
    pub num_classes: usize,
    /// `[channels, height, width]` of one example.
    pub input_shape: [usize; 3],
}

impl ResNetSpec {
    /// `n_b` blocks per stack at widths `[n_f, 2 n_f, 4 n_f]`, all 3×3, equal neuron thirds.
    pub fn baseline(n_b: usize, n_f: usize, num_classes: usize, input_shape: [usize; 3]) -> Self {
        let third = 1.0 / 3.0;
        ResNetSpec {
            blocks: [n_b; 3],
            stack_filters: [n_f, 2 * n_f, 4 * n_f],
            op_fractions: None,
            neuron_fractions: [[third; 3]; 3],
            num_classes,
            input_shape,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.contains(&0) || self.stack_filters.contains(&0) {
            return Err(Error::Validation(format!(
                "blocks {:?} and filters {:?} must be positive",
                self.blocks, self.stack_filters
            )));
        }
        if self.stack_filters.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Validation(format!("stack filters {:?} decrease", self.stack_filters)));
        }
        if self.num_classes == 0 || self.input_shape.contains(&0) {
            return Err(Error::Validation("num_classes and input shape must be positive".into()));
        }
        let check = |what: &str, s: usize, f: &[f64]| -> Result<()> {
            let sum: f64 = f.iter().sum();
            if f.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > FRACTION_TOL {
                return Err(Error::Validation(format!("stack {s} {what} fractions {f:?} must be >= 0 and sum to 1")));
            }
            Ok(())
        };
        for s in 0..3 {
            check("neuron", s, &self.neuron_fractions[s])?;
            if let Some(ops) = &self.op_fractions {
                check("op", s, &ops[s])?;
            }
        }
        Ok(())
    }

    /// Kernel size of every conv in stack `s`, in forward order
    /// (block 0 op 1, block 0 op 2, ...). Largest kernels come first.
    pub fn stack_kernels(&self, s: usize) -> Result<Vec<usize>> {
        let n = 2 * self.blocks[s];
        let Some(ops) = &self.op_fractions else { return Ok(vec![3; n]) };
        let counts = largest_remainder(&ops[s], n).map_err(|e| Error::Validation(e.to_string()))?;
        Ok(KERNELS.iter().zip(&counts).rev().flat_map(|(&k, &c)| std::iter::repeat(k).take(c)).collect())
    }

    /// Convolution layers per stack, shortcuts excluded.
    pub fn conv_layers_per_stack(&self) -> [usize; 3] {
        self.blocks.map(|b| 2 * b)
    }

    /// Parameter ledger without allocating weights.
    pub fn ledger(&self) -> Result<ParamLedger> {
        self.validate()?;
        let mut l = ParamLedger::default();
        let f = self.stack_filters;
        l.push_conv("stem", self.input_shape[0], f[0], 3);
        for s in 0..3 {
            let kernels = self.stack_kernels(s)?;
            for b in 0..self.blocks[s] {
                let c_in = if s > 0 && b == 0 { f[s - 1] } else { f[s] };
                let name = format!("s{s}.b{b}");
                l.push(format!("{name}.op1.bn"), LedgerKind::BatchNorm, 2 * c_in);
                l.push_conv(format!("{name}.op1.conv"), c_in, f[s], kernels[2 * b]);
                l.push(format!("{name}.op2.bn"), LedgerKind::BatchNorm, 2 * f[s]);
                l.push_conv(format!("{name}.op2.conv"), f[s], f[s], kernels[2 * b + 1]);
                if c_in != f[s] || (s > 0 && b == 0) {
                    l.push_conv(format!("{name}.proj"), c_in, f[s], 1);
                }
            }
        }
        l.push("classifier", LedgerKind::Classifier, f[2] * self.num_classes + self.num_classes);
        Ok(l)
    }
}

/// Apply the signal-processing modifications to the 3-block, 48-filter baseline:
/// blocks `[3, 4, 2]`, widths `[48, 96, 144]`, mixed kernel sizes and
/// per-stack neuron mixes.
pub fn build_sp_resnet(base: &ResNetSpec) -> Result<ResNetSpec> {
    base.validate()?;
    if base.blocks != [3, 3, 3] || base.stack_filters != [48, 96, 192] {
        return Err(Error::Validation(format!(
            "expected the 3-block 48-filter baseline, got blocks {:?} filters {:?}",
            base.blocks, base.stack_filters
        )));
    }
    let spec = ResNetSpec {
        blocks: [3, 4, 2],
        stack_filters: [48, 96, 144],
        op_fractions: Some([[0.2, 0.4, 0.2, 0.2], [0.2, 0.5, 0.2, 0.1], [0.3, 0.7, 0.0, 0.0]]),
        // the stack-2 mix is quoted as 35/40/20 (95%); keep its ratios, rescaled to 1
        neuron_fractions: [[0.45, 0.40, 0.15], normalized([0.35, 0.40, 0.20]), [0.30, 0.45, 0.25]],
        num_classes: base.num_classes,
        input_shape: base.input_shape,
    };
    spec.validate()?;
    Ok(spec)
}

fn normalized(f: [f64; 3]) -> [f64; 3] {
    let sum: f64 = f.iter().sum();
    f.map(|v| v / sum)
}

/// Batch norm → prunable neuron layer → convolution.
#[derive(Debug, Clone)]
pub struct ResOp {
    pub bn: BatchNormLayer,
    pub neurons: PrunableNeuronLayer,
    pub conv: ConvLayer,
}

#[derive(Debug, Clone)]
pub struct ResBlock {
    pub op1: ResOp,
    pub op2: ResOp,
    pub projection: Option<ConvLayer>,
}

/// Position of one prunable neuron layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSite {
    pub stack: usize,
    pub block: usize,
    /// 1 or 2.
    pub op: usize,
}

/// Executable [`ResNetSpec`].
#[derive(Debug, Clone)]
pub struct ResNet {
    spec: ResNetSpec,
    store: ParamStore,
    stem: ConvLayer,
    /// Stack-major.
    blocks: Vec<ResBlock>,
    block_stack: Vec<usize>,
    classifier: DenseLayer,
}

pub fn build_resnet(spec: &ResNetSpec, seed: u64) -> Result<ResNet> {
    spec.validate()?;
    let mut rng = seeded(seed);
    let mut store = ParamStore::new();
    let f = spec.stack_filters;
    let stem = ConvLayer::new(&mut store, "stem", spec.input_shape[0], f[0], 3, 1, &mut rng);
    let mut blocks = Vec::new();
    let mut block_stack = Vec::new();
    for s in 0..3 {
        let kernels = spec.stack_kernels(s)?;
        for b in 0..spec.blocks[s] {
            let reduce = s > 0 && b == 0;
            let c_in = if reduce { f[s - 1] } else { f[s] };
            let stride = if reduce { 2 } else { 1 };
            let name = format!("s{s}.b{b}");
            let mut op = |tag: &str, c_in: usize, k: usize, stride: usize, store: &mut ParamStore| -> Result<ResOp> {
                Ok(ResOp {
                    bn: BatchNormLayer::new(store, &format!("{name}.{tag}.bn"), c_in),
                    neurons: PrunableNeuronLayer::from_fractions(c_in, spec.neuron_fractions[s], ShiftKind::Conv)?,
                    conv: ConvLayer::new(store, &format!("{name}.{tag}.conv"), c_in, f[s], k, stride, &mut rng),
                })
            };
            let op1 = op("op1", c_in, kernels[2 * b], stride, &mut store)?;
            let op2 = op("op2", f[s], kernels[2 * b + 1], 1, &mut store)?;
            let projection = (reduce || c_in != f[s])
                .then(|| ConvLayer::new(&mut store, &format!("{name}.proj"), c_in, f[s], 1, stride, &mut rng));
            blocks.push(ResBlock { op1, op2, projection });
            block_stack.push(s);
        }
    }
    let classifier = DenseLayer::new(&mut store, "classifier", f[2], spec.num_classes, &mut rng);
    Ok(ResNet { spec: spec.clone(), store, stem, blocks, block_stack, classifier })
}

impl ResNet {
    pub fn spec(&self) -> &ResNetSpec {
        &self.spec
    }

    /// Number of prunable neuron layers (two per block).
    pub fn layer_count(&self) -> usize {
        2 * self.blocks.len()
    }

    pub fn site(&self, layer: usize) -> LayerSite {
        let b = layer / 2;
        let stack = self.block_stack[b];
        let first = self.block_stack.iter().position(|&s| s == stack).expect("stack has blocks");
        LayerSite { stack, block: b - first, op: layer % 2 + 1 }
    }

    pub fn op(&self, layer: usize) -> &ResOp {
        let blk = &self.blocks[layer / 2];
        if layer % 2 == 0 { &blk.op1 } else { &blk.op2 }
    }

    pub(crate) fn op_mut(&mut self, layer: usize) -> &mut ResOp {
        let blk = &mut self.blocks[layer / 2];
        if layer % 2 == 0 { &mut blk.op1 } else { &mut blk.op2 }
    }

    /// Zero one neuron's output without touching any weights.
    pub fn mask_channel(&mut self, layer: usize, channel: usize) -> Result<()> {
        if layer >= self.layer_count() {
            return Err(Error::InvalidArgument(format!("layer {layer} out of range")));
        }
        self.op_mut(layer).neurons.prune(channel)
    }

    pub fn neurons(&self, layer: usize) -> &PrunableNeuronLayer {
        &self.op(layer).neurons
    }

    /// Convolution whose output channels feed layer `layer`'s neurons:
    /// the stem for the first op, otherwise the conv preceding it in the chain.
    pub fn producing_conv(&self, layer: usize) -> &ConvLayer {
        if layer == 0 { &self.stem } else { &self.op(layer - 1).conv }
    }

    pub fn blocks(&self) -> &[ResBlock] {
        &self.blocks
    }

    /// Logits plus the neuron-layer outputs, in layer order.
    pub fn forward_with_taps(&mut self, tape: &mut Tape, input: Var, mode: Mode) -> Result<(Var, Vec<Var>)> {
        let store = &self.store;
        let mut taps = Vec::with_capacity(self.layer_count());
        let mut x = self.stem.forward(tape, store, input)?;
        for blk in &mut self.blocks {
            let shortcut = match &blk.projection {
                Some(p) => p.forward(tape, store, x)?,
                None => x,
            };
            let mut h = x;
            for op in [&mut blk.op1, &mut blk.op2] {
                let n = op.bn.forward(tape, store, h, mode)?;
                let a = op.neurons.forward(tape, n)?;
                taps.push(a);
                h = op.conv.forward(tape, store, a)?;
            }
            x = tape.add(h, shortcut)?;
        }
        let pooled = tape.global_avg_pool(x)?;
        Ok((self.classifier.forward(tape, store, pooled)?, taps))
    }
}

impl Network for ResNet {
    fn forward(&mut self, tape: &mut Tape, input: Var, mode: Mode) -> Result<Var> {
        Ok(self.forward_with_taps(tape, input, mode)?.0)
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn ledger(&self) -> ParamLedger {
        self.spec.ledger().expect("validated at build")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_largest_first() {
        let sp = build_sp_resnet(&ResNetSpec::baseline(3, 48, 10, [3, 32, 32])).unwrap();
        assert_eq!(sp.stack_kernels(0).unwrap(), vec![7, 5, 3, 3, 3, 1]);
        assert_eq!(sp.stack_kernels(1).unwrap(), vec![7, 5, 3, 3, 3, 3, 1, 1]);
        assert_eq!(sp.stack_kernels(2).unwrap(), vec![3, 3, 3, 1]);
    }

    #[test]
    fn sites_follow_stacks() {
        let spec = ResNetSpec::baseline(2, 2, 3, [1, 8, 8]);
        let net = build_resnet(&spec, 0).unwrap();
        assert_eq!(net.layer_count(), 12);
        assert_eq!(net.site(5), LayerSite { stack: 1, block: 0, op: 2 });
        assert_eq!(net.site(11), LayerSite { stack: 2, block: 1, op: 2 });
    }

    #[test]
    fn built_params_match_ledger() {
        let spec = build_sp_resnet(&ResNetSpec::baseline(3, 48, 10, [3, 32, 32])).unwrap();
        let small = ResNetSpec { stack_filters: [4, 8, 12], ..spec };
        let net = build_resnet(&small, 1).unwrap();
        assert_eq!(net.params().total_count() as u64, net.ledger().total());
    }

    #[test]
    fn bad_fractions_rejected() {
        let mut spec = ResNetSpec::baseline(1, 4, 2, [1, 8, 8]);
        spec.neuron_fractions[1] = [0.5, 0.5, 0.1];
        assert!(build_resnet(&spec, 0).unwrap_err().is_validation());
        let mut spec = ResNetSpec::baseline(1, 4, 2, [1, 8, 8]);
        spec.stack_filters = [8, 4, 16];
        assert!(spec.validate().is_err());
    }
}
