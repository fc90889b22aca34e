use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
struct Param {
    name: String,
    tensor: Tensor,
    // true = entry is pruned and pinned at zero
    frozen: Option<Vec<bool>>,
}

/// Owns every trainable tensor of a network.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            tensor,
            frozen: None,
        });
        ParamId(self.params.len() - 1)
    }

    /// Fan-in scaled uniform initialization, bound `sqrt(6 / fan_in)`.
    pub fn add_fan_in_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut SeededRng,
    ) -> ParamId {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt() as f32;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("length matches shape"))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn frozen(&self, id: ParamId) -> Option<&[bool]> {
        self.params[id.0].frozen.as_deref()
    }

    /// Pin a contiguous range of entries at zero for the rest of training.
    pub fn freeze_range(&mut self, id: ParamId, start: usize, len: usize) -> Result<()> {
        let p = &mut self.params[id.0];
        let n = p.tensor.numel();
        if start + len > n {
            return Err(Error::InvalidArgument(format!(
                "freeze range {start}..{} exceeds `{}` with {n} entries",
                start + len,
                p.name
            )));
        }
        let mask = p.frozen.get_or_insert_with(|| vec![false; n]);
        mask[start..start + len].iter_mut().for_each(|m| *m = true);
        p.tensor.data_mut()[start..start + len]
            .iter_mut()
            .for_each(|v| *v = 0.0);
        Ok(())
    }

    /// Total number of entries across all parameters.
    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Number of entries that are not pinned at zero by pruning.
    pub fn active_count(&self) -> usize {
        self.params
            .iter()
            .map(|p| match &p.frozen {
                Some(m) => m.iter().filter(|f| !**f).count(),
                None => p.tensor.numel(),
            })
            .sum()
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.clear_grad();
        }
    }
}
