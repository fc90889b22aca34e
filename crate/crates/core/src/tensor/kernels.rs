//! Slice-level kernels shared by the tape's forward and backward passes.

use super::tape::ShiftKind;
use crate::error::{Error, Result};

/// Per-channel mean and biased variance, accumulated in f64.
pub(crate) fn channel_moments(x: &[f32], n: usize, c: usize, plane: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (n * plane) as f64;
    let mut mean = vec![0.0f64; c];
    for i in 0..n {
        for (ch, mu) in mean.iter_mut().enumerate() {
            let base = (i * c + ch) * plane;
            *mu += x[base..base + plane].iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0f64; c];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            let mu = mean[ch];
            var[ch] += x[base..base + plane]
                .iter()
                .map(|&v| {
                    let d = v as f64 - mu;
                    d * d
                })
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    (mean, var)
}

pub(crate) fn batch_norm_backward(
    g: &[f32],
    xhat: &[f32],
    inv_std: &[f32],
    gamma: &[f32],
    c: usize,
    plane: usize,
    train: bool,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let n = g.len() / (c * plane).max(1);
    let mut sum_g = vec![0.0f64; c];
    let mut sum_gx = vec![0.0f64; c];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            for j in base..base + plane {
                sum_g[ch] += g[j] as f64;
                sum_gx[ch] += (g[j] * xhat[j]) as f64;
            }
        }
    }
    let m = (n * plane) as f64;
    let mut dx = vec![0.0f32; g.len()];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            let k = gamma[ch] * inv_std[ch];
            if train {
                let mg = (sum_g[ch] / m) as f32;
                let mgx = (sum_gx[ch] / m) as f32;
                for j in base..base + plane {
                    dx[j] = k * (g[j] - mg - xhat[j] * mgx);
                }
            } else {
                for j in base..base + plane {
                    dx[j] = k * g[j];
                }
            }
        }
    }
    let dgamma = sum_gx.into_iter().map(|v| v as f32).collect();
    let dbeta = sum_g.into_iter().map(|v| v as f32).collect();
    (dx, dgamma, dbeta)
}

/// Max-subtracted softmax along the middle axis of an `[outer, len, inner]` view.
pub(crate) fn softmax(x: &[f32], outer: usize, len: usize, inner: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let mx = (0..len).map(|k| x[idx(k)]).fold(f32::NEG_INFINITY, f32::max);
            let mut total = 0.0f64;
            for k in 0..len {
                let e = ((x[idx(k)] - mx) as f64).exp();
                out[idx(k)] = e as f32;
                total += e;
            }
            for k in 0..len {
                out[idx(k)] = (out[idx(k)] as f64 / total) as f32;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward(y: &[f32], g: &[f32], outer: usize, len: usize, inner: usize) -> Vec<f32> {
    let mut dx = vec![0.0f32; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let dot: f64 = (0..len).map(|k| (g[idx(k)] * y[idx(k)]) as f64).sum();
            for k in 0..len {
                dx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot as f32);
            }
        }
    }
    dx
}

fn shift_index(shape: &[usize], kind: ShiftKind) -> Result<impl Fn(usize) -> usize + '_> {
    match (kind, shape.len()) {
        (ShiftKind::Dense, 2) | (ShiftKind::Conv, 4) => {}
        _ => {
            return Err(Error::InvalidArgument(format!(
                "shift: {kind:?} layer expects rank {}, got shape {shape:?}",
                if kind == ShiftKind::Dense { 2 } else { 4 }
            )))
        }
    }
    Ok(move |src: usize| match kind {
        ShiftKind::Dense => {
            let c = shape[1];
            let (row, col) = (src / c, src % c);
            row * c + (col + 1) % c
        }
        ShiftKind::Conv => {
            let (h, w) = (shape[2], shape[3]);
            let plane = h * w;
            let (blk, rem) = (src / plane, src % plane);
            let (r, col) = (rem / w, rem % w);
            blk * plane + ((r + 1) % h) * w + (col + 1) % w
        }
    })
}

/// `out[dest(i)] = x[i]` where `dest` rotates by one along the shifted axes.
pub(crate) fn shift_forward(x: &[f32], shape: &[usize], kind: ShiftKind) -> Result<Vec<f32>> {
    let dest = shift_index(shape, kind)?;
    let mut out = vec![0.0f32; x.len()];
    for (i, &v) in x.iter().enumerate() {
        out[dest(i)] = v;
    }
    Ok(out)
}

pub(crate) fn shift_backward(g: &[f32], shape: &[usize], kind: ShiftKind) -> Vec<f32> {
    let dest = shift_index(shape, kind).expect("validated in forward");
    (0..g.len()).map(|i| g[dest(i)]).collect()
}

pub(crate) fn matmul_bias(x: &[f32], w: &[f32], b: &[f32], n: usize, cin: usize, m: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * m];
    for i in 0..n {
        let o = &mut out[i * m..(i + 1) * m];
        o.copy_from_slice(b);
        for k in 0..cin {
            let xv = x[i * cin + k];
            for (ov, &wv) in o.iter_mut().zip(&w[k * m..(k + 1) * m]) {
                *ov += xv * wv;
            }
        }
    }
    out
}

pub(crate) fn dense_backward(
    x: &[f32],
    w: &[f32],
    g: &[f32],
    n: usize,
    cin: usize,
    m: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut dx = vec![0.0f32; n * cin];
    let mut dw = vec![0.0f32; cin * m];
    let mut db = vec![0.0f32; m];
    for i in 0..n {
        let gi = &g[i * m..(i + 1) * m];
        for (d, &v) in db.iter_mut().zip(gi) {
            *d += v;
        }
        for k in 0..cin {
            let wr = &w[k * m..(k + 1) * m];
            dx[i * cin + k] = wr.iter().zip(gi).map(|(a, b)| a * b).sum();
            let xv = x[i * cin + k];
            for (d, &gv) in dw[k * m..(k + 1) * m].iter_mut().zip(gi) {
                *d += xv * gv;
            }
        }
    }
    (dx, dw, db)
}
