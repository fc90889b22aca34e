//! Growth-search space: block DAGs, network specs, materialization, and
//! structural statistics.

pub mod block;
mod net;
pub mod spec;
mod stats;

pub use block::{BlockGraph, CombineMode, Edge, Growth, OpKind};
pub use net::{materialize, spec_ledger, GrowthNet};
pub use spec::{grow, random_model, NetworkSpec, NeuronLayerSpec, SpecTemplate, STACKS};
pub use stats::{structure_stats, StackStats};
