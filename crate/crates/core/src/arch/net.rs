//! Executable networks materialized from a [`NetworkSpec`].

use super::block::{BlockGraph, SINK, SOURCE};
use super::spec::{NetworkSpec, NeuronLayerSpec, STACKS};
use crate::error::Result;
use crate::model::{BatchNormLayer, ConvLayer, DenseLayer, LedgerKind, Network, ParamLedger};
use crate::neuron::{NeuronKind, PrunableNeuronLayer, TrainableNeuronLayer};
use crate::rng::{seeded, SeededRng};
use crate::tensor::{Mode, ParamStore, ShiftKind, Tape, Var};

#[derive(Debug, Clone)]
pub(crate) enum NeuronUnit {
    Trainable(TrainableNeuronLayer),
    Prunable(PrunableNeuronLayer),
    Fixed(NeuronKind, usize),
}

impl NeuronUnit {
    fn new(spec: NeuronLayerSpec, store: &mut ParamStore, name: &str, channels: usize) -> Self {
        match spec {
            NeuronLayerSpec::Trainable => {
                NeuronUnit::Trainable(TrainableNeuronLayer::new(store, name, channels, ShiftKind::Conv))
            }
            NeuronLayerSpec::Prunable => {
                NeuronUnit::Prunable(PrunableNeuronLayer::equal_thirds(channels, ShiftKind::Conv))
            }
            NeuronLayerSpec::Fixed(kind) => NeuronUnit::Fixed(kind, channels),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        match self {
            NeuronUnit::Trainable(l) => l.forward(tape, store, x),
            NeuronUnit::Prunable(l) => l.forward(tape, x),
            NeuronUnit::Fixed(NeuronKind::Conventional, _) => Ok(tape.relu(x)),
            NeuronUnit::Fixed(kind, c) => {
                let x2 = tape.shift(x, ShiftKind::Conv)?;
                tape.neuron_select(x, x2, &vec![*kind; *c], &vec![true; *c])
            }
        }
    }

    fn param_count(&self) -> usize {
        match self {
            NeuronUnit::Trainable(l) => l.weight_count(),
            _ => 0,
        }
    }
}

/// conv(K) → batch norm → neuron layer.
#[derive(Debug, Clone)]
pub(crate) struct OpUnit {
    pub conv: ConvLayer,
    pub bn: BatchNormLayer,
    pub neuron: NeuronUnit,
}

impl OpUnit {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        k: usize,
        stride: usize,
        neuron: NeuronLayerSpec,
        rng: &mut SeededRng,
    ) -> Self {
        OpUnit {
            conv: ConvLayer::new(store, &format!("{name}.conv"), n_in, n_out, k, stride, rng),
            bn: BatchNormLayer::new(store, &format!("{name}.bn"), n_out),
            neuron: NeuronUnit::new(neuron, store, &format!("{name}.neuron"), n_out),
        }
    }

    fn forward(&mut self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv.forward(tape, store, x)?;
        let h = self.bn.forward(tape, store, h, mode)?;
        self.neuron.forward(tape, store, h)
    }

    fn itemize(&self, ledger: &mut ParamLedger, name: &str) {
        ledger.push_conv(format!("{name}.conv"), self.conv.n_in, self.conv.n_out, self.conv.k);
        ledger.push(format!("{name}.bn"), LedgerKind::BatchNorm, 2 * self.bn.channels);
        let n = self.neuron.param_count();
        if n > 0 {
            ledger.push(format!("{name}.neuron"), LedgerKind::NeuronLayer, n);
        }
    }
}

#[derive(Debug, Clone)]
struct BlockUnit {
    graph: BlockGraph,
    order: Vec<usize>,
    edges: Vec<Option<OpUnit>>,
}

impl BlockUnit {
    fn forward(&mut self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let mut values: Vec<Option<Var>> = vec![None; self.graph.junctions.len()];
        values[SOURCE] = Some(x);
        for &j in &self.order {
            if j == SOURCE {
                continue;
            }
            let width = self.graph.junctions[j];
            let mut parts = Vec::new();
            for (i, e) in self.graph.edges.iter().enumerate() {
                if e.to != j {
                    continue;
                }
                let src = values[e.from].expect("topological order");
                let input = if e.in_offset == 0 && e.filters == self.graph.junctions[e.from] {
                    src
                } else {
                    tape.slice_channels(src, e.in_offset, e.filters)?
                };
                let out = match &mut self.edges[i] {
                    Some(unit) => unit.forward(tape, store, input, mode)?,
                    None => input,
                };
                parts.push((out, e.out_offset));
            }
            let v = if parts.len() == 1 && parts[0].1 == 0 && tape.value(parts[0].0).shape()[1] == width {
                parts[0].0
            } else {
                tape.assemble(&parts, width)?
            };
            values[j] = Some(v);
        }
        Ok(values[SINK].expect("sink reached"))
    }
}

/// A growth-search network ready for training.
#[derive(Debug, Clone)]
pub struct GrowthNet {
    spec: NetworkSpec,
    store: ParamStore,
    stem: OpUnit,
    blocks: Vec<BlockUnit>,
    reductions: Vec<OpUnit>,
    classifier: DenseLayer,
}

/// Validate `spec` and allocate its parameters with seeded initialization.
pub fn materialize(spec: &NetworkSpec, seed: u64) -> Result<GrowthNet> {
    spec.validate()?;
    let mut rng = seeded(seed);
    let mut store = ParamStore::new();
    let nl = spec.neuron_layer;
    let stem = OpUnit::new(&mut store, "stem", spec.input_shape[0], spec.n_f, 3, 1, nl, &mut rng);
    let mut blocks = Vec::with_capacity(spec.blocks.len());
    let mut reductions = Vec::with_capacity(STACKS - 1);
    for (bi, graph) in spec.blocks.iter().enumerate() {
        let edges = graph
            .edges
            .iter()
            .enumerate()
            .map(|(ei, e)| {
                e.op.kernel().map(|k| {
                    OpUnit::new(&mut store, &format!("block{bi}.edge{ei}"), e.filters, e.filters, k, 1, nl, &mut rng)
                })
            })
            .collect();
        blocks.push(BlockUnit {
            graph: graph.clone(),
            order: graph.topo_order()?,
            edges,
        });
        let stack = spec.stack_of(bi);
        if (bi + 1) % spec.n_b == 0 && stack + 1 < STACKS {
            let c = spec.stack_width(stack);
            reductions.push(OpUnit::new(&mut store, &format!("reduce{stack}"), c, 2 * c, 3, 2, nl, &mut rng));
        }
    }
    let final_width = spec.stack_width(STACKS - 1);
    let classifier = DenseLayer::new(&mut store, "classifier", final_width, spec.num_classes, &mut rng);
    Ok(GrowthNet {
        spec: spec.clone(),
        store,
        stem,
        blocks,
        reductions,
        classifier,
    })
}

impl GrowthNet {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Per trainable neuron layer: name and per-channel branch probabilities.
    pub fn neuron_mixtures(&self) -> Vec<(String, Vec<[f64; 3]>)> {
        let mut out = Vec::new();
        let mut visit = |name: String, u: &OpUnit| {
            if let NeuronUnit::Trainable(l) = &u.neuron {
                out.push((name, l.branch_probabilities(&self.store)));
            }
        };
        visit("stem".into(), &self.stem);
        for (bi, b) in self.blocks.iter().enumerate() {
            for (ei, e) in b.edges.iter().enumerate() {
                if let Some(u) = e {
                    visit(format!("block{bi}.edge{ei}"), u);
                }
            }
        }
        for (i, r) in self.reductions.iter().enumerate() {
            visit(format!("reduce{i}"), r);
        }
        out
    }
}

impl Network for GrowthNet {
    fn forward(&mut self, tape: &mut Tape, input: Var, mode: Mode) -> Result<Var> {
        let store = &self.store;
        let mut h = self.stem.forward(tape, store, input, mode)?;
        let n_b = self.spec.n_b;
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            h = block.forward(tape, store, h, mode)?;
            let stack = bi / n_b;
            if (bi + 1) % n_b == 0 && stack + 1 < STACKS {
                h = self.reductions[stack].forward(tape, store, h, mode)?;
            }
        }
        let pooled = tape.global_avg_pool(h)?;
        self.classifier.forward(tape, store, pooled)
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn ledger(&self) -> ParamLedger {
        let mut l = ParamLedger::default();
        self.stem.itemize(&mut l, "stem");
        for (bi, b) in self.blocks.iter().enumerate() {
            for (ei, e) in b.edges.iter().enumerate() {
                if let Some(u) = e {
                    u.itemize(&mut l, &format!("block{bi}.edge{ei}"));
                }
            }
            let stack = bi / self.spec.n_b;
            if (bi + 1) % self.spec.n_b == 0 && stack + 1 < STACKS {
                self.reductions[stack].itemize(&mut l, &format!("reduce{stack}"));
            }
        }
        l.push("classifier", LedgerKind::Classifier, self.classifier.param_count());
        l
    }

    fn set_neuron_scale(&mut self, scale: f32) {
        let mut set = |u: &mut OpUnit| {
            if let NeuronUnit::Trainable(l) = &mut u.neuron {
                l.scale = scale;
            }
        };
        set(&mut self.stem);
        for b in &mut self.blocks {
            b.edges.iter_mut().flatten().for_each(&mut set);
        }
        self.reductions.iter_mut().for_each(set);
    }
}

/// Parameter ledger computed from the spec alone, without allocating weights.
pub fn spec_ledger(spec: &NetworkSpec) -> Result<ParamLedger> {
    spec.validate()?;
    let neuron = |c: usize| match spec.neuron_layer {
        NeuronLayerSpec::Trainable => 3 * c,
        _ => 0,
    };
    let mut l = ParamLedger::default();
    let op = |l: &mut ParamLedger, name: String, n_in: usize, n_out: usize, k: usize| {
        l.push_conv(format!("{name}.conv"), n_in, n_out, k);
        l.push(format!("{name}.bn"), LedgerKind::BatchNorm, 2 * n_out);
        if neuron(n_out) > 0 {
            l.push(format!("{name}.neuron"), LedgerKind::NeuronLayer, neuron(n_out));
        }
    };
    op(&mut l, "stem".into(), spec.input_shape[0], spec.n_f, 3);
    for (bi, b) in spec.blocks.iter().enumerate() {
        for (ei, e) in b.edges.iter().enumerate() {
            if let Some(k) = e.op.kernel() {
                op(&mut l, format!("block{bi}.edge{ei}"), e.filters, e.filters, k);
            }
        }
        let stack = spec.stack_of(bi);
        if (bi + 1) % spec.n_b == 0 && stack + 1 < STACKS {
            let c = spec.stack_width(stack);
            op(&mut l, format!("reduce{stack}"), c, 2 * c, 3);
        }
    }
    let c = spec.stack_width(STACKS - 1);
    l.push("classifier", LedgerKind::Classifier, c * spec.num_classes + spec.num_classes);
    Ok(l)
}
