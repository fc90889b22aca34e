//! Momentum SGD with coupled weight decay, and the step-decay schedule.

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OptimState {
    velocity: Vec<Vec<f32>>,
    pub momentum: f32,
    pub weight_decay: f32,
    lr: f64,
}

impl OptimState {
    pub fn new(store: &ParamStore, lr: f64, momentum: f32, weight_decay: f32) -> Result<Self> {
        let mut s = OptimState {
            velocity: store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect(),
            momentum,
            weight_decay,
            lr: 0.0,
        };
        s.set_lr(lr)?;
        Ok(s)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
        }
        self.lr = lr;
        Ok(())
    }

    pub fn velocity(&self, index: usize) -> &[f32] {
        &self.velocity[index]
    }
}

/// One classical-momentum step:
/// `v ← μ·v + g + λ·p`, `p ← p − lr·v`.
///
/// Entries frozen by pruning stay at zero with zero velocity.
pub fn sgd_step(store: &mut ParamStore, state: &mut OptimState) -> Result<()> {
    if state.velocity.len() != store.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer tracks {} parameters but the store has {}",
            state.velocity.len(),
            store.len()
        )));
    }
    for id in store.ids() {
        if store.get(id).grad().is_none() {
            return Err(Error::MissingGradient(store.name(id).to_string()));
        }
    }
    let lr = state.lr as f32;
    let (mu, wd) = (state.momentum, state.weight_decay);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let frozen = store.frozen(id).map(|f| f.to_vec());
        let t = store.get_mut(id);
        let g = t.take_grad().expect("checked above");
        let v = &mut state.velocity[id.0];
        for (i, p) in t.data_mut().iter_mut().enumerate() {
            if frozen.as_ref().is_some_and(|f| f[i]) {
                v[i] = 0.0;
                *p = 0.0;
                continue;
            }
            v[i] = mu * v[i] + g[i] + wd * *p;
            *p -= lr * v[i];
        }
    }
    Ok(())
}

/// `base_lr · 0.2^⌊step / (0.3·total)⌋`: an 80% cut at every 30% of training.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument("total_steps must be positive".into()));
    }
    // integer form of floor(step / (0.3 * total))
    let drops = (10 * step as u64) / (3 * total_steps as u64);
    Ok(base_lr * 0.2f64.powi(drops as i32))
}
