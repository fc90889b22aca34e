//! Datasets, file formats, scaling rules and the SGD training harness.

mod dataset;
mod formats;
mod harness;
mod scale;

pub use dataset::{synth_dataset, Dataset, SynthSpec};
pub use formats::{
    decode_nft, encode_nft, labels_path, load_cifar10_binary, load_nft_dataset, parse_cifar10_records, read_labels,
    read_nft, save_nft_dataset, write_labels, write_nft,
};
pub use harness::{evaluate, finetune, train_and_eval, TrainConfig, TrainReport};
pub use scale::{scale_settings, ScaleRefs, ScaledSettings};
