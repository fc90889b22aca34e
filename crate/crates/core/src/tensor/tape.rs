//! Recording tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value. Nodes are
//! appended only after their inputs exist, so the node order is a valid
//! topological order and [`Tape::backward`] simply walks it in reverse.

use serde::{Deserialize, Serialize};

use super::conv::{self, ConvGeom};
use super::kernels;
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};
use crate::neuron::NeuronKind;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Which axes the second neuron input is rotated along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// `[N, C]`: rotate the feature axis by one.
    Dense,
    /// `[N, C, H, W]`: rotate both spatial axes by one.
    Conv,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Batch-norm running statistics, updated in train mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        train: bool,
        c: usize,
        plane: usize,
    },
    Relu(Var),
    Tanh(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Sum(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    ChannelScale {
        x: Var,
        s: Var,
        c: usize,
        plane: usize,
    },
    Row {
        x: Var,
        row: usize,
    },
    Shift {
        x: Var,
        kind: ShiftKind,
    },
    Coincidence(Var, Var),
    MaxNeuron(Var, Var),
    NeuronSelect {
        x1: Var,
        x2: Var,
        kinds: Vec<NeuronKind>,
        active: Vec<bool>,
        plane: usize,
    },
    Slice {
        x: Var,
        offset: usize,
        plane: usize,
    },
    Assemble {
        parts: Vec<(Var, usize)>,
        plane: usize,
    },
    GlobalAvgPool {
        x: Var,
        plane: usize,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f32>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// A single forward pass recorded for differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf or parameter node.
    pub fn wrt(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Write parameter gradients into the store, summing duplicate uses.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<()> {
        store.clear_grads();
        for &(id, var) in &self.params {
            let Some(g) = self.wrt(var) else { continue };
            let t = store.get_mut(id);
            let merged = match t.take_grad() {
                Some(mut prev) => {
                    for (p, v) in prev.iter_mut().zip(g) {
                        *p += v;
                    }
                    prev
                }
                None => g.to_vec(),
            };
            t.set_grad(merged)?;
        }
        Ok(())
    }
}

fn plane_of(shape: &[usize]) -> usize {
    shape[2..].iter().product()
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn need_rank_at_least(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() < rank {
        return Err(Error::InvalidArgument(format!(
            "{op}: expected rank >= {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    /// Record a parameter; its gradient is reported under `id`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let mut t = store.get(id).clone();
        t.clear_grad();
        self.push(Op::Param(id), t)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        let (n, cin, h, wd) = xt.dims4()?;
        let (cout, kcin, kh, kw) = wt.dims4()?;
        if kcin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                expected: xt.shape().to_vec(),
                got: wt.shape().to_vec(),
            });
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv2d: kernel must be square with odd extent, got {kh}x{kw}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d: stride must be positive".into()));
        }
        let geom = ConvGeom { n, cin, h, w: wd, cout, k: kh, stride };
        let out = conv::forward(&geom, xt.data(), wt.data());
        let shape = vec![n, cout, geom.out_h(), geom.out_w()];
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::Conv2d { x, w, geom }, value))
    }

    /// Batch normalization over every axis except the channel axis.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: Mode,
    ) -> Result<Var> {
        let xt = self.value(x);
        need_rank_at_least("batch_norm", xt, 2)?;
        let shape = xt.shape().to_vec();
        let (n, c, plane) = (shape[0], shape[1], plane_of(&shape));
        if n == 0 {
            return Err(Error::InvalidArgument("batch_norm: zero batch size".into()));
        }
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::ShapeMismatch {
                    op: if name == "gamma" { "batch_norm gamma" } else { "batch_norm beta" },
                    expected: vec![c],
                    got: self.value(v).shape().to_vec(),
                });
            }
        }
        if stats.mean.len() != c {
            return Err(Error::shape("batch_norm running stats", &[c], &[stats.mean.len()]));
        }
        let train = mode == Mode::Train;
        let (mean, inv_std) = if train {
            let (mean, var) = kernels::channel_moments(xt.data(), n, c, plane);
            let m = (n * plane) as f64;
            for ch in 0..c {
                let unbiased = if m > 1.0 { var[ch] * m / (m - 1.0) } else { var[ch] };
                stats.mean[ch] = (BN_MOMENTUM * stats.mean[ch] as f64
                    + (1.0 - BN_MOMENTUM) * mean[ch]) as f32;
                stats.var[ch] =
                    (BN_MOMENTUM * stats.var[ch] as f64 + (1.0 - BN_MOMENTUM) * unbiased) as f32;
            }
            let inv: Vec<f32> = var.iter().map(|v| (1.0 / (v + BN_EPSILON).sqrt()) as f32).collect();
            (mean.iter().map(|&m| m as f32).collect::<Vec<_>>(), inv)
        } else {
            let inv = stats
                .var
                .iter()
                .map(|&v| (1.0 / (v as f64 + BN_EPSILON).sqrt()) as f32)
                .collect();
            (stats.mean.clone(), inv)
        };
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0f32; xd.len()];
        let mut out = vec![0.0f32; xd.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                for j in base..base + plane {
                    let h = (xd[j] - mean[ch]) * inv_std[ch];
                    xhat[j] = h;
                    out[j] = g[ch] * h + b[ch];
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train, c, plane },
            value,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(op, value)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f32::tanh, Op::Tanh(x))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        same_shape(name, at, bt)?;
        let data = at.data().iter().zip(bt.data()).map(|(&u, &v)| f(u, v)).collect();
        let value = Tensor::new(at.shape().to_vec(), data)?;
        Ok(self.push(op, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |u, v| u + v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |u, v| u * v, Op::Mul(a, b))
    }

    pub fn coincidence(&mut self, x1: Var, x2: Var) -> Result<Var> {
        self.binary("coincidence", x1, x2, crate::neuron::coincidence, Op::Coincidence(x1, x2))
    }

    pub fn max_neuron(&mut self, x1: Var, x2: Var) -> Result<Var> {
        self.binary("max_neuron", x1, x2, crate::neuron::max_neuron, Op::MaxNeuron(x1, x2))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        self.push(Op::Sum(x), Tensor::scalar(s as f32))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::InvalidArgument(format!(
                "softmax: axis {axis} out of range for shape {:?}",
                t.shape()
            )));
        }
        let outer: usize = t.shape()[..axis].iter().product();
        let len = t.shape()[axis];
        let inner: usize = t.shape()[axis + 1..].iter().product();
        let out = kernels::softmax(t.data(), outer, len, inner);
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(Op::Softmax { x, outer, len, inner }, value))
    }

    /// Multiply channel `c` of `x` by `s[c]`.
    pub fn channel_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xt, st) = (self.value(x), self.value(s));
        need_rank_at_least("channel_scale", xt, 2)?;
        let c = xt.shape()[1];
        if st.shape() != [c] {
            return Err(Error::shape("channel_scale", &[c], st.shape()));
        }
        let plane = plane_of(xt.shape());
        let sd = st.data();
        let mut out = xt.data().to_vec();
        for (i, chunk) in out.chunks_mut(plane.max(1)).enumerate() {
            let f = sd[i % c];
            chunk.iter_mut().for_each(|v| *v *= f);
        }
        let value = Tensor::new(xt.shape().to_vec(), out)?;
        Ok(self.push(Op::ChannelScale { x, s, c, plane }, value))
    }

    /// Row `row` of a rank-2 tensor.
    pub fn row(&mut self, x: Var, row: usize) -> Result<Var> {
        let t = self.value(x);
        let [r, c] = t.shape()[..] else {
            return Err(Error::InvalidArgument(format!("row: expected rank 2, got {:?}", t.shape())));
        };
        if row >= r {
            return Err(Error::InvalidArgument(format!("row: index {row} out of {r}")));
        }
        let value = Tensor::new(vec![c], t.data()[row * c..(row + 1) * c].to_vec())?;
        Ok(self.push(Op::Row { x, row }, value))
    }

    /// Circular shift producing the second neuron input.
    pub fn shift(&mut self, x: Var, kind: ShiftKind) -> Result<Var> {
        let t = self.value(x);
        let out = kernels::shift_forward(t.data(), t.shape(), kind)?;
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(Op::Shift { x, kind }, value))
    }

    /// Per-channel hard neuron selection; inactive channels output zero.
    pub fn neuron_select(
        &mut self,
        x1: Var,
        x2: Var,
        kinds: &[NeuronKind],
        active: &[bool],
    ) -> Result<Var> {
        let (a, b) = (self.value(x1), self.value(x2));
        same_shape("neuron_select", a, b)?;
        need_rank_at_least("neuron_select", a, 2)?;
        let c = a.shape()[1];
        if kinds.len() != c || active.len() != c {
            return Err(Error::InvalidArgument(format!(
                "neuron_select: {} kinds and {} mask entries for {c} channels",
                kinds.len(),
                active.len()
            )));
        }
        let plane = plane_of(a.shape());
        let (ad, bd) = (a.data(), b.data());
        let mut out = vec![0.0f32; ad.len()];
        for (blk, o) in out.chunks_mut(plane.max(1)).enumerate() {
            let ch = blk % c;
            if !active[ch] {
                continue;
            }
            let f = kinds[ch].response_fn();
            let base = blk * plane;
            for (j, v) in o.iter_mut().enumerate() {
                *v = f(ad[base + j], bd[base + j]);
            }
        }
        let value = Tensor::new(a.shape().to_vec(), out)?;
        Ok(self.push(
            Op::NeuronSelect { x1, x2, kinds: kinds.to_vec(), active: active.to_vec(), plane },
            value,
        ))
    }

    /// Channels `offset..offset+len` of `x`.
    pub fn slice_channels(&mut self, x: Var, offset: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        need_rank_at_least("slice_channels", t, 2)?;
        let (n, c) = (t.shape()[0], t.shape()[1]);
        if offset + len > c || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "slice_channels: window {offset}..{} outside {c} channels",
                offset + len
            )));
        }
        let plane = plane_of(t.shape());
        let mut out = Vec::with_capacity(n * len * plane);
        for i in 0..n {
            let start = (i * c + offset) * plane;
            out.extend_from_slice(&t.data()[start..start + len * plane]);
        }
        let mut shape = t.shape().to_vec();
        shape[1] = len;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::Slice { x, offset, plane }, value))
    }

    /// Sum parts into a zero tensor of `width` channels, each at its offset.
    pub fn assemble(&mut self, parts: &[(Var, usize)], width: usize) -> Result<Var> {
        let Some(&(first, _)) = parts.first() else {
            return Err(Error::InvalidArgument("assemble: no inputs".into()));
        };
        let ft = self.value(first);
        need_rank_at_least("assemble", ft, 2)?;
        let mut shape = ft.shape().to_vec();
        shape[1] = width;
        let n = shape[0];
        let plane = plane_of(&shape);
        let mut out = vec![0.0f32; n * width * plane];
        for &(v, off) in parts {
            let t = self.value(v);
            let pc = t.shape()[1];
            if t.shape()[0] != n || t.shape()[2..] != shape[2..] || off + pc > width {
                return Err(Error::ShapeMismatch {
                    op: "assemble",
                    expected: shape.clone(),
                    got: t.shape().to_vec(),
                });
            }
            for i in 0..n {
                let src = &t.data()[i * pc * plane..(i + 1) * pc * plane];
                let dst = &mut out[(i * width + off) * plane..(i * width + off + pc) * plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::Assemble { parts: parts.to_vec(), plane }, value))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (n, c, h, w) = t.dims4()?;
        let plane = h * w;
        let out = t
            .data()
            .chunks(plane)
            .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
            .collect();
        let value = Tensor::new(vec![n, c], out)?;
        Ok(self.push(Op::GlobalAvgPool { x, plane }, value))
    }

    /// `x[N, C] · w[C, M] + b[M]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        let [n, cin] = xt.shape()[..] else {
            return Err(Error::InvalidArgument(format!("dense: input must be rank 2, got {:?}", xt.shape())));
        };
        let [wcin, m] = wt.shape()[..] else {
            return Err(Error::InvalidArgument(format!("dense: weights must be rank 2, got {:?}", wt.shape())));
        };
        if wcin != cin {
            return Err(Error::shape("dense", xt.shape(), wt.shape()));
        }
        if bt.shape() != [m] {
            return Err(Error::shape("dense bias", &[m], bt.shape()));
        }
        let out = kernels::matmul_bias(xt.data(), wt.data(), bt.data(), n, cin, m);
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(Op::Dense { x, w, b }, value))
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let [n, m] = t.shape()[..] else {
            return Err(Error::InvalidArgument(format!(
                "cross_entropy: logits must be rank 2, got {:?}",
                t.shape()
            )));
        };
        if labels.len() != n {
            return Err(Error::shape("cross_entropy labels", &[n], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
            return Err(Error::InvalidArgument(format!(
                "cross_entropy: label {bad} out of range for {m} classes"
            )));
        }
        let probs = kernels::softmax(t.data(), n, m, 1);
        let mut loss = 0.0f64;
        for (i, &l) in labels.iter().enumerate() {
            let row = &t.data()[i * m..(i + 1) * m];
            let mx = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
            let lse = mx + row.iter().map(|&v| (v as f64 - mx).exp()).sum::<f64>().ln();
            loss += lse - row[l] as f64;
        }
        let loss = (loss / n as f64) as f32;
        Ok(self.push(
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            Tensor::scalar(loss),
        ))
    }

    /// Differentiate a scalar output with respect to every recorded node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward: output must be a scalar, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);
        let mut params = Vec::new();
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            match node.op {
                Op::Leaf => continue,
                Op::Param(id) => {
                    params.push((id, Var(i)));
                    continue;
                }
                _ => {}
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        params.reverse();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::Conv2d { x, w, geom } => {
                let (dx, dw) = conv::backward(geom, val(*x), val(*w), g);
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train, c, plane } => {
                let (dx, dgamma, dbeta) =
                    kernels::batch_norm_backward(g, xhat, inv_std, val(*gamma), *c, *plane, *train);
                accumulate(grads, *x, dx);
                accumulate(grads, *gamma, dgamma);
                accumulate(grads, *beta, dbeta);
            }
            Op::Relu(x) => {
                let dx = g.iter().zip(y).map(|(&d, &o)| if o > 0.0 { d } else { 0.0 }).collect();
                accumulate(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let dx = g.iter().zip(y).map(|(&d, &o)| d * (1.0 - o * o)).collect();
                accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                accumulate(grads, *a, g.iter().zip(bv).map(|(d, v)| d * v).collect());
                accumulate(grads, *b, g.iter().zip(av).map(|(d, v)| d * v).collect());
            }
            Op::Scale(x, f) => {
                accumulate(grads, *x, g.iter().map(|d| d * f).collect());
            }
            Op::Sum(x) => {
                accumulate(grads, *x, vec![g[0]; val(*x).len()]);
            }
            Op::Softmax { x, outer, len, inner } => {
                accumulate(grads, *x, kernels::softmax_backward(y, g, *outer, *len, *inner));
            }
            Op::ChannelScale { x, s, c, plane } => {
                let (xv, sv) = (val(*x), val(*s));
                let p = (*plane).max(1);
                let mut dx = vec![0.0f32; xv.len()];
                let mut ds = vec![0.0f64; *c];
                for (blk, (dxc, (gc, xc))) in
                    dx.chunks_mut(p).zip(g.chunks(p).zip(xv.chunks(p))).enumerate()
                {
                    let ch = blk % c;
                    let mut acc = 0.0f64;
                    for ((o, &d), &xi) in dxc.iter_mut().zip(gc).zip(xc) {
                        *o = d * sv[ch];
                        acc += (d * xi) as f64;
                    }
                    ds[ch] += acc;
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *s, ds.into_iter().map(|v| v as f32).collect());
            }
            Op::Row { x, row } => {
                let mut dx = vec![0.0f32; val(*x).len()];
                let c = g.len();
                dx[row * c..(row + 1) * c].copy_from_slice(g);
                accumulate(grads, *x, dx);
            }
            Op::Shift { x, kind } => {
                let shape = self.nodes[x.0].value.shape();
                let dx = kernels::shift_backward(g, shape, *kind);
                accumulate(grads, *x, dx);
            }
            Op::Coincidence(a, b) | Op::MaxNeuron(a, b) => {
                let is_co = matches!(node.op, Op::Coincidence(..));
                let (av, bv) = (val(*a), val(*b));
                let mut da = vec![0.0f32; g.len()];
                let mut db = vec![0.0f32; g.len()];
                for i in 0..g.len() {
                    let (d1, d2) = if is_co {
                        crate::neuron::coincidence_grad(av[i], bv[i])
                    } else {
                        crate::neuron::max_neuron_grad(av[i], bv[i])
                    };
                    da[i] = g[i] * d1;
                    db[i] = g[i] * d2;
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::NeuronSelect { x1, x2, kinds, active, plane } => {
                let (av, bv) = (val(*x1), val(*x2));
                let c = kinds.len();
                let p = (*plane).max(1);
                let mut da = vec![0.0f32; g.len()];
                let mut db = vec![0.0f32; g.len()];
                for blk in 0..g.len() / p {
                    let ch = blk % c;
                    if !active[ch] {
                        continue;
                    }
                    let f = kinds[ch].grad_fn();
                    for j in blk * p..(blk + 1) * p {
                        let (d1, d2) = f(av[j], bv[j]);
                        da[j] = g[j] * d1;
                        db[j] = g[j] * d2;
                    }
                }
                accumulate(grads, *x1, da);
                accumulate(grads, *x2, db);
            }
            Op::Slice { x, offset, plane } => {
                let xs = self.nodes[x.0].value.shape();
                let (n, c) = (xs[0], xs[1]);
                let len = node.value.shape()[1];
                let mut dx = vec![0.0f32; val(*x).len()];
                for i in 0..n {
                    let dst = (i * c + offset) * plane;
                    dx[dst..dst + len * plane]
                        .copy_from_slice(&g[i * len * plane..(i + 1) * len * plane]);
                }
                accumulate(grads, *x, dx);
            }
            Op::Assemble { parts, plane } => {
                let shape = node.value.shape();
                let (n, width) = (shape[0], shape[1]);
                for &(v, off) in parts {
                    let pc = self.nodes[v.0].value.shape()[1];
                    let mut dp = Vec::with_capacity(n * pc * plane);
                    for i in 0..n {
                        let s = (i * width + off) * plane;
                        dp.extend_from_slice(&g[s..s + pc * plane]);
                    }
                    accumulate(grads, v, dp);
                }
            }
            Op::GlobalAvgPool { x, plane } => {
                let inv = 1.0 / *plane as f32;
                let mut dx = Vec::with_capacity(g.len() * plane);
                for &d in g {
                    dx.extend(std::iter::repeat(d * inv).take(*plane));
                }
                accumulate(grads, *x, dx);
            }
            Op::Dense { x, w, b } => {
                let xs = self.nodes[x.0].value.shape();
                let (n, cin) = (xs[0], xs[1]);
                let m = node.value.shape()[1];
                let (dx, dw, db) = kernels::dense_backward(val(*x), val(*w), g, n, cin, m);
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
                accumulate(grads, *b, db);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let n = labels.len();
                let m = probs.len() / n;
                let scale = g[0] / n as f32;
                let mut dx = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    dx[i * m + l] -= 1.0;
                }
                dx.iter_mut().for_each(|v| *v *= scale);
                accumulate(grads, *logits, dx);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], v: Var, g: Vec<f32>) {
    match &mut grads[v.0] {
        Some(prev) => {
            for (p, x) in prev.iter_mut().zip(&g) {
                *p += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
