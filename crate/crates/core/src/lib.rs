//! Max/coincidence neuron models, growth and pruning architecture search,
//! and the small deterministic training core they run on.

pub mod analysis;
pub mod apportion;
pub mod arch;
pub mod error;
pub mod growth;
pub mod model;
pub mod neuron;
pub mod prune;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
