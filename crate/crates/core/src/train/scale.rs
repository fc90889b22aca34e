use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference dataset the scaling rules are anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleRefs {
    pub n_c: f64,
    pub c_c: f64,
    pub n_f_c: f64,
    pub n_s_c: f64,
}

impl Default for ScaleRefs {
    fn default() -> Self {
        ScaleRefs { n_c: 50_000.0, c_c: 3.0, n_f_c: 16.0, n_s_c: 3900.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaledSettings {
    pub n_f: usize,
    pub n_s: usize,
}

/// Base filter count and training steps for a dataset of `n_ds` examples
/// with `c_ds` channels:
///
/// `N_F = N_F,C · sqrt(N_DS / N_C) · (C_DS / C_C)`, `N_S = N_S,C · sqrt(N_DS / N_C)`,
/// each rounded to the nearest integer with a minimum of 1. With
/// `channel_factor` off the `C_DS / C_C` term is dropped.
pub fn scale_settings(n_ds: usize, c_ds: usize, refs: &ScaleRefs, channel_factor: bool) -> Result<ScaledSettings> {
    if n_ds == 0 || c_ds == 0 {
        return Err(Error::InvalidArgument(format!("dataset size {n_ds} and channels {c_ds} must be positive")));
    }
    if !(refs.n_c > 0.0 && refs.c_c > 0.0 && refs.n_f_c > 0.0 && refs.n_s_c > 0.0) {
        return Err(Error::InvalidArgument(format!("reference constants must be positive: {refs:?}")));
    }
    let root = (n_ds as f64 / refs.n_c).sqrt();
    let ratio = if channel_factor { c_ds as f64 / refs.c_c } else { 1.0 };
    let round = |v: f64| (v.round() as usize).max(1);
    Ok(ScaledSettings { n_f: round(refs.n_f_c * root * ratio), n_s: round(refs.n_s_c * root) })
}
