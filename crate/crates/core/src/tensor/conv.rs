//! Same-padded 2-D cross-correlation kernels.
//!
//! Loops are ordered so the innermost loop runs over contiguous output
//! columns; for stride 1 it reduces to an axpy over a row slice.

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        (self.k - 1) / 2
    }

    pub fn out_h(&self) -> usize {
        self.h.div_ceil(self.stride)
    }

    pub fn out_w(&self) -> usize {
        self.w.div_ceil(self.stride)
    }

    /// Output rows/cols `o` with `o*stride + tap - pad` inside `[0, len)`.
    fn valid_range(&self, tap: usize, len: usize, out_len: usize) -> (usize, usize) {
        let p = self.pad();
        let s = self.stride;
        let lo = if tap >= p { 0 } else { (p - tap).div_ceil(s) };
        // o*s + tap - p <= len - 1
        let hi_excl = if len + p < tap + 1 {
            0
        } else {
            ((len - 1 + p - tap) / s + 1).min(out_len)
        };
        (lo, hi_excl.max(lo))
    }
}

pub(crate) fn forward(g: &ConvGeom, x: &[f32], w: &[f32]) -> Vec<f32> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let (k, s, p) = (g.k, g.stride, g.pad());
    let mut out = vec![0.0f32; g.n * g.cout * ho * wo];
    let in_plane = g.h * g.w;
    let out_plane = ho * wo;
    for n in 0..g.n {
        let xs = &x[n * g.cin * in_plane..(n + 1) * g.cin * in_plane];
        let os = &mut out[n * g.cout * out_plane..(n + 1) * g.cout * out_plane];
        for co in 0..g.cout {
            let o = &mut os[co * out_plane..(co + 1) * out_plane];
            for ci in 0..g.cin {
                let xp = &xs[ci * in_plane..(ci + 1) * in_plane];
                for kh in 0..k {
                    let (oh_lo, oh_hi) = g.valid_range(kh, g.h, ho);
                    for kw in 0..k {
                        let wv = w[((co * g.cin + ci) * k + kh) * k + kw];
                        let (ow_lo, ow_hi) = g.valid_range(kw, g.w, wo);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ih = oh * s + kh - p;
                            let orow = &mut o[oh * wo + ow_lo..oh * wo + ow_hi];
                            let irow = &xp[ih * g.w..(ih + 1) * g.w];
                            if s == 1 {
                                let start = ow_lo + kw - p;
                                let src = &irow[start..start + orow.len()];
                                for (dst, &v) in orow.iter_mut().zip(src) {
                                    *dst += wv * v;
                                }
                            } else {
                                for (j, dst) in orow.iter_mut().enumerate() {
                                    *dst += wv * irow[(ow_lo + j) * s + kw - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients with respect to the input and the kernel.
pub(crate) fn backward(g: &ConvGeom, x: &[f32], w: &[f32], dy: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let (k, s, p) = (g.k, g.stride, g.pad());
    let in_plane = g.h * g.w;
    let out_plane = ho * wo;
    let mut dx = vec![0.0f32; x.len()];
    let mut dw = vec![0.0f32; w.len()];
    for n in 0..g.n {
        let xs = &x[n * g.cin * in_plane..(n + 1) * g.cin * in_plane];
        let dxs = &mut dx[n * g.cin * in_plane..(n + 1) * g.cin * in_plane];
        let dys = &dy[n * g.cout * out_plane..(n + 1) * g.cout * out_plane];
        for co in 0..g.cout {
            let d = &dys[co * out_plane..(co + 1) * out_plane];
            for ci in 0..g.cin {
                let xp = &xs[ci * in_plane..(ci + 1) * in_plane];
                let dxp = &mut dxs[ci * in_plane..(ci + 1) * in_plane];
                for kh in 0..k {
                    let (oh_lo, oh_hi) = g.valid_range(kh, g.h, ho);
                    for kw in 0..k {
                        let widx = ((co * g.cin + ci) * k + kh) * k + kw;
                        let wv = w[widx];
                        let (ow_lo, ow_hi) = g.valid_range(kw, g.w, wo);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        let mut acc = 0.0f32;
                        for oh in oh_lo..oh_hi {
                            let ih = oh * s + kh - p;
                            let drow = &d[oh * wo + ow_lo..oh * wo + ow_hi];
                            let base = ih * g.w;
                            if s == 1 {
                                let start = base + ow_lo + kw - p;
                                let len = drow.len();
                                let xrow = &xp[start..start + len];
                                let dxrow = &mut dxp[start..start + len];
                                for ((dv, &xv), dxv) in drow.iter().zip(xrow).zip(dxrow) {
                                    acc += dv * xv;
                                    *dxv += wv * dv;
                                }
                            } else {
                                for (j, &dv) in drow.iter().enumerate() {
                                    let idx = base + (ow_lo + j) * s + kw - p;
                                    acc += dv * xp[idx];
                                    dxp[idx] += wv * dv;
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw)
}
