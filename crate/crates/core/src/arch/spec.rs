use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::block::{BlockGraph, OpKind};
use crate::error::{Error, Result};
use crate::neuron::NeuronKind;
use crate::rng::SeededRng;

pub const SPEC_VERSION: u32 = 1;
pub const STACKS: usize = 3;

/// Activation layer placed after each batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronLayerSpec {
    Trainable,
    Prunable,
    Fixed(NeuronKind),
}

/// Serializable growth-search architecture.
///
/// Layout: a 3×3 stem op, then three stacks of `n_b` search blocks with a
/// stride-2 reduction op between consecutive stacks, then global average
/// pooling and a linear classifier. Stack `s` runs at `n_f · 2^s` channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub version: u32,
    pub n_f: usize,
    pub n_b: usize,
    pub num_classes: usize,
    /// `[channels, height, width]` of one example.
    pub input_shape: [usize; 3],
    pub neuron_layer: NeuronLayerSpec,
    /// Stack-major: block `i` belongs to stack `i / n_b`.
    pub blocks: Vec<BlockGraph>,
}

/// Everything needed to build specs except the block graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecTemplate {
    pub n_f: usize,
    pub n_b: usize,
    pub num_classes: usize,
    pub input_shape: [usize; 3],
    pub neuron_layer: NeuronLayerSpec,
}

impl SpecTemplate {
    /// Every search block a single 3×3 op.
    pub fn seed_spec(&self) -> NetworkSpec {
        let blocks = (0..STACKS * self.n_b)
            .map(|i| BlockGraph::single(self.stack_width(i / self.n_b), OpKind::Conv3x3))
            .collect();
        NetworkSpec {
            version: SPEC_VERSION,
            n_f: self.n_f,
            n_b: self.n_b,
            num_classes: self.num_classes,
            input_shape: self.input_shape,
            neuron_layer: self.neuron_layer,
            blocks,
        }
    }

    pub fn stack_width(&self, stack: usize) -> usize {
        self.n_f << stack
    }
}

impl NetworkSpec {
    pub fn template(&self) -> SpecTemplate {
        SpecTemplate {
            n_f: self.n_f,
            n_b: self.n_b,
            num_classes: self.num_classes,
            input_shape: self.input_shape,
            neuron_layer: self.neuron_layer,
        }
    }

    pub fn stack_width(&self, stack: usize) -> usize {
        self.n_f << stack
    }

    pub fn stack_of(&self, block: usize) -> usize {
        block / self.n_b
    }

    pub fn stack_blocks(&self, stack: usize) -> &[BlockGraph] {
        &self.blocks[stack * self.n_b..(stack + 1) * self.n_b]
    }

    /// Total search-block ops, identity ops included.
    pub fn op_count(&self) -> usize {
        self.blocks.iter().map(BlockGraph::op_count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.version != SPEC_VERSION {
            return fail(format!("unsupported spec version {}", self.version));
        }
        if self.n_f == 0 || self.n_b == 0 {
            return fail("n_f and n_b must be positive".into());
        }
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.input_shape.contains(&0) {
            return fail(format!("input shape {:?} has a zero extent", self.input_shape));
        }
        if self.blocks.len() != STACKS * self.n_b {
            return fail(format!(
                "expected {} search blocks ({STACKS} stacks × n_b = {}), found {}",
                STACKS * self.n_b,
                self.n_b,
                self.blocks.len()
            ));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let want = self.stack_width(self.stack_of(i));
            if b.width != want {
                return fail(format!("block {i} has width {} but its stack runs at {want}", b.width));
            }
            b.validate().map_err(|e| Error::Validation(format!("block {i}: {e}")))?;
        }
        Ok(())
    }

    /// Canonical compact JSON; byte-equal for equal specs.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_json().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Start from single 3×3 blocks and apply `g ~ U{0..=n_g_init}` random growth
/// procedures to each block independently.
pub fn random_model(template: &SpecTemplate, n_g_init: usize, rng: &mut SeededRng) -> NetworkSpec {
    let mut spec = template.seed_spec();
    for block in &mut spec.blocks {
        let g = rng.gen_range(0..=n_g_init);
        for _ in 0..g {
            *block = block.grow_random(rng);
        }
    }
    spec
}

/// Mutated copy of `parent`: `n_g_search` random procedures on each of
/// `n_b_search` distinct random blocks.
pub fn grow(parent: &NetworkSpec, n_b_search: usize, n_g_search: usize, rng: &mut SeededRng) -> Result<NetworkSpec> {
    parent.validate()?;
    if n_b_search == 0 || n_b_search > parent.blocks.len() {
        return Err(Error::InvalidArgument(format!(
            "n_b_search must lie in 1..={}, got {n_b_search}",
            parent.blocks.len()
        )));
    }
    let mut child = parent.clone();
    let mut picked = sample(rng, parent.blocks.len(), n_b_search).into_vec();
    picked.sort_unstable();
    for b in picked {
        for _ in 0..n_g_search {
            child.blocks[b] = child.blocks[b].grow_random(rng);
        }
    }
    Ok(child)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn template() -> SpecTemplate {
        SpecTemplate {
            n_f: 16,
            n_b: 3,
            num_classes: 10,
            input_shape: [3, 32, 32],
            neuron_layer: NeuronLayerSpec::Trainable,
        }
    }

    #[test]
    fn zero_growth_gives_seed_spec() {
        let s = random_model(&template(), 0, &mut seeded(1));
        assert_eq!(s, template().seed_spec());
        assert!(s.blocks.iter().all(|b| b.op_count() == 1 && b.edges[0].op == OpKind::Conv3x3));
    }

    #[test]
    fn growth_count_is_bounded() {
        for seed in 0..20 {
            let s = random_model(&template(), 10, &mut seeded(seed));
            s.validate().unwrap();
            // each procedure adds one or two ops
            assert!(s.blocks.iter().all(|b| b.op_count() <= 1 + 2 * 10));
        }
    }

    #[test]
    fn seeded_models_are_identical() {
        let a = random_model(&template(), 10, &mut seeded(42)).to_canonical_json();
        let b = random_model(&template(), 10, &mut seeded(42)).to_canonical_json();
        assert_eq!(a, b);
    }

    #[test]
    fn grow_leaves_parent_untouched() {
        let parent = random_model(&template(), 4, &mut seeded(5));
        let before = parent.to_canonical_json();
        let child = grow(&parent, 1, 1, &mut seeded(6)).unwrap();
        assert_eq!(parent.to_canonical_json(), before);
        let delta = child.op_count() - parent.op_count();
        assert!(delta == 1 || delta == 2);
        child.validate().unwrap();
    }

    #[test]
    fn json_round_trip() {
        let s = random_model(&template(), 6, &mut seeded(9));
        let text = s.to_canonical_json();
        let back = NetworkSpec::from_json(&text).unwrap();
        assert_eq!(back.to_canonical_json(), text);
        assert_eq!(back.hash(), s.hash());
    }

    #[test]
    fn wrong_block_width_rejected() {
        let mut s = template().seed_spec();
        s.blocks[4] = BlockGraph::single(16, OpKind::Conv3x3);
        assert!(s.validate().is_err());
    }
}
