//! Synthetic item/label datasets, sequence builders and token encodings.

mod batch;
mod config;
mod dataset;
mod tokens;
mod zipf;

pub use batch::{
    build_balanced_batch, build_icl_eval_batch, build_iwl_eval_batch, build_training_batch,
    ItemSource, SequenceBatch,
};
pub use config::{DataConfig, DatasetSize};
pub use dataset::{sample_dataset, Dataset};
pub use tokens::{encode_tokens, LabelEncoding, TokenMatrix};
pub use zipf::{sample_zipf_indices, ZipfSampler};
