#![allow(dead_code)]

use neuroforge::neuron::NeuronKind;
use neuroforge::rng::{seeded, SeededRng};
use neuroforge::tensor::{Mode, RunningStats, ShiftKind, Tape, Tensor, Var};
use neuroforge::Result;
use rand::Rng;

pub const FD_STEP: f32 = 1e-3;
pub const GRAD_TOL: f64 = 1e-3;
/// Inputs closer than this to a kink are redrawn.
pub const KINK_MARGIN: f32 = 0.05;

pub fn uniform(rng: &mut SeededRng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Uniform in [-2, 2] with |x| > KINK_MARGIN.
pub fn kink_free(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f32 = rng.gen_range(-2.0..2.0);
            if v.abs() > KINK_MARGIN {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Direct same-padded cross-correlation in f64.
pub fn naive_conv(x: &Tensor, w: &Tensor, stride: usize) -> Vec<f64> {
    let [n, ci, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [co, _, k, _] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let pad = (k - 1) / 2;
    let (oh, ow) = (h.div_ceil(stride), wd.div_ceil(stride));
    let mut out = vec![0.0f64; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((b * ci + c) * h + iy as usize) * wd + ix as usize] as f64;
                                let wv = w.data()[((o * ci + c) * k + ky) * k + kx] as f64;
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * co + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    out
}

pub type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
pub type MakeInputs = Box<dyn Fn(&mut SeededRng) -> Vec<Tensor>>;

pub struct GradCase {
    pub name: &'static str,
    pub inputs: MakeInputs,
    pub build: Build,
}

fn case(
    name: &'static str,
    inputs: impl Fn(&mut SeededRng) -> Vec<Tensor> + 'static,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> GradCase {
    GradCase { name, inputs: Box::new(inputs), build: Box::new(build) }
}

fn forward(build: &Build, inputs: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = build(&mut tape, &vars)?;
    Ok((tape, vars, y))
}

/// Largest relative error `‖g_auto − g_fd‖ / max(‖g_auto‖, ‖g_fd‖)` over the
/// inputs, for the scalar loss `Σ r ⊙ y` with fixed random `r`.
pub fn grad_check(build: &Build, inputs: &[Tensor], rng: &mut SeededRng) -> Result<f64> {
    let (tape, _, y) = forward(build, inputs)?;
    let r = uniform(rng, tape.value(y).shape(), -1.0, 1.0);
    let loss_of = |ins: &[Tensor]| -> Result<f64> {
        let (t, _, y) = forward(build, ins)?;
        Ok(t.value(y).data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum())
    };
    let (mut tape, vars, y) = forward(build, inputs)?;
    let rv = tape.leaf(r.clone());
    let weighted = tape.mul(y, rv)?;
    let loss = tape.sum(weighted);
    let grads = tape.backward(loss)?;
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let auto: Vec<f64> = match grads.wrt(vars[i]) {
            Some(g) => g.iter().map(|&v| v as f64).collect(),
            None => vec![0.0; input.numel()],
        };
        let mut fd = Vec::with_capacity(input.numel());
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let step = (plus[i].data()[j] as f64 - minus[i].data()[j] as f64) / 2.0;
            fd.push((loss_of(&plus)? - loss_of(&minus)?) / (2.0 * step));
        }
        let diff = auto.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na = auto.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nf = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = na.max(nf);
        let rel = if denom < 1e-12 { diff } else { diff / denom };
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Worst relative error of `case` over `points` random input draws.
pub fn run_case(case: &GradCase, points: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let inputs = (case.inputs)(&mut rng);
        worst = worst.max(grad_check(&case.build, &inputs, &mut rng)?);
    }
    Ok(worst)
}

fn bn_case(name: &'static str, mode: Mode) -> GradCase {
    case(
        name,
        |r| vec![uniform(r, &[3, 2, 2, 2], -2.0, 2.0), uniform(r, &[2], 0.5, 1.5), uniform(r, &[2], -1.0, 1.0)],
        move |t, v| {
            let mut stats = RunningStats::new(2);
            t.batch_norm(v[0], v[1], v[2], &mut stats, mode)
        },
    )
}

/// Every differentiable tape primitive, including both neuron responses.
pub fn primitive_cases() -> Vec<GradCase> {
    let kinds = [NeuronKind::Conventional, NeuronKind::Max, NeuronKind::Coincidence];
    vec![
        case("conv2d k3 s1", |r| vec![uniform(r, &[2, 2, 5, 5], -1.0, 1.0), uniform(r, &[3, 2, 3, 3], -1.0, 1.0)], |t, v| t.conv2d(v[0], v[1], 1)),
        case("conv2d k3 s2", |r| vec![uniform(r, &[2, 2, 6, 6], -1.0, 1.0), uniform(r, &[2, 2, 3, 3], -1.0, 1.0)], |t, v| t.conv2d(v[0], v[1], 2)),
        case("conv2d k5 s1", |r| vec![uniform(r, &[1, 2, 5, 4], -1.0, 1.0), uniform(r, &[2, 2, 5, 5], -1.0, 1.0)], |t, v| t.conv2d(v[0], v[1], 1)),
        case("conv2d k1 s2", |r| vec![uniform(r, &[2, 3, 5, 5], -1.0, 1.0), uniform(r, &[2, 3, 1, 1], -1.0, 1.0)], |t, v| t.conv2d(v[0], v[1], 2)),
        case("conv2d k7 s1", |r| vec![uniform(r, &[1, 1, 4, 4], -1.0, 1.0), uniform(r, &[2, 1, 7, 7], -1.0, 1.0)], |t, v| t.conv2d(v[0], v[1], 1)),
        bn_case("batch_norm train", Mode::Train),
        bn_case("batch_norm eval", Mode::Eval),
        case("relu", |r| vec![kink_free(r, &[2, 3, 2])], |t, v| Ok(t.relu(v[0]))),
        case("tanh", |r| vec![uniform(r, &[2, 5], -2.0, 2.0)], |t, v| Ok(t.tanh(v[0]))),
        case("scale", |r| vec![uniform(r, &[7], -2.0, 2.0)], |t, v| Ok(t.scale(v[0], 2.5))),
        case("add", |r| vec![uniform(r, &[2, 3], -2.0, 2.0), uniform(r, &[2, 3], -2.0, 2.0)], |t, v| t.add(v[0], v[1])),
        case("mul", |r| vec![uniform(r, &[2, 3], -2.0, 2.0), uniform(r, &[2, 3], -2.0, 2.0)], |t, v| t.mul(v[0], v[1])),
        case("coincidence", |r| vec![kink_free(r, &[2, 6]), kink_free(r, &[2, 6])], |t, v| t.coincidence(v[0], v[1])),
        case("max_neuron", |r| vec![kink_free(r, &[2, 6]), kink_free(r, &[2, 6])], |t, v| t.max_neuron(v[0], v[1])),
        case("sum", |r| vec![uniform(r, &[3, 4], -2.0, 2.0)], |t, v| Ok(t.sum(v[0]))),
        case("softmax axis 0", |r| vec![uniform(r, &[3, 4], -3.0, 3.0)], |t, v| t.softmax(v[0], 0)),
        case("softmax axis 1", |r| vec![uniform(r, &[2, 3, 2], -3.0, 3.0)], |t, v| t.softmax(v[0], 1)),
        case("channel_scale", |r| vec![uniform(r, &[2, 3, 2, 2], -2.0, 2.0), uniform(r, &[3], -2.0, 2.0)], |t, v| t.channel_scale(v[0], v[1])),
        case("row", |r| vec![uniform(r, &[3, 4], -2.0, 2.0)], |t, v| t.row(v[0], 1)),
        case("shift dense", |r| vec![uniform(r, &[2, 3], -2.0, 2.0)], |t, v| t.shift(v[0], ShiftKind::Dense)),
        case("shift conv", |r| vec![uniform(r, &[2, 2, 3, 3], -2.0, 2.0)], |t, v| t.shift(v[0], ShiftKind::Conv)),
        case(
            "neuron_select",
            |r| vec![kink_free(r, &[2, 4, 2, 2]), kink_free(r, &[2, 4, 2, 2])],
            move |t, v| {
                let k = [kinds[0], kinds[1], kinds[2], kinds[1]];
                t.neuron_select(v[0], v[1], &k, &[true, true, true, false])
            },
        ),
        case("slice_channels", |r| vec![uniform(r, &[2, 5, 2, 2], -2.0, 2.0)], |t, v| t.slice_channels(v[0], 1, 3)),
        case(
            "assemble",
            |r| vec![uniform(r, &[2, 3, 2, 2], -2.0, 2.0), uniform(r, &[2, 2, 2, 2], -2.0, 2.0)],
            |t, v| t.assemble(&[(v[0], 0), (v[1], 2)], 4),
        ),
        case("global_avg_pool", |r| vec![uniform(r, &[2, 3, 3, 2], -2.0, 2.0)], |t, v| t.global_avg_pool(v[0])),
        case(
            "dense",
            |r| vec![uniform(r, &[3, 4], -2.0, 2.0), uniform(r, &[4, 5], -1.0, 1.0), uniform(r, &[5], -1.0, 1.0)],
            |t, v| t.dense(v[0], v[1], v[2]),
        ),
        case("cross_entropy", |r| vec![uniform(r, &[4, 5], -3.0, 3.0)], |t, v| t.cross_entropy(v[0], &[0, 3, 4, 1])),
    ]
}
