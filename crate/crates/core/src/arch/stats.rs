//! Structural statistics of growth-search architectures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::block::OpKind;
use super::spec::{NetworkSpec, STACKS};

/// Height, width and op composition of one stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackStats {
    pub stack: usize,
    /// Longest path through the stack's blocks, in parameterized ops.
    pub height: usize,
    /// Largest same-height filter total over the stack's blocks, as a
    /// multiple of the stack's channel budget.
    pub width: f64,
    /// Parameterized ops by kind.
    pub op_histogram: BTreeMap<OpKind, usize>,
}

pub fn structure_stats(spec: &NetworkSpec) -> Vec<StackStats> {
    (0..STACKS)
        .map(|s| {
            let blocks = spec.stack_blocks(s);
            let mut op_histogram: BTreeMap<OpKind, usize> =
                OpKind::CONVS.iter().map(|&k| (k, 0)).collect();
            for e in blocks.iter().flat_map(|b| &b.edges) {
                if e.op != OpKind::NoneOp {
                    *op_histogram.entry(e.op).or_default() += 1;
                }
            }
            StackStats {
                stack: s,
                height: blocks.iter().map(|b| b.height()).sum(),
                width: blocks.iter().map(|b| b.width_stat()).fold(0.0, f64::max),
                op_histogram,
            }
        })
        .collect()
}
