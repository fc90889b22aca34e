//! Residual networks with prunable neuron layers and importance-driven pruning.

mod importance;
mod resnet;
mod search;

pub use importance::{
    importance_l2, kind_fractions, mean_square, neural_composition, prune_neuron, prune_step, NeuronId, PruneEvent,
};
pub use resnet::{build_resnet, build_sp_resnet, LayerSite, ResBlock, ResNet, ResNetSpec, ResOp, KERNELS};
pub use search::{
    prune_history_csv, pruning_search, pruning_search_with, write_prune_history, PruneConfig, PruneOutcome,
    PruneRecord, PruneStop, PRUNE_CSV_HEADER,
};
