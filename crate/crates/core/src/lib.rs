//! Generative multi-step trajectory prediction over learned Semantic-IDs.

// Index loops over parallel buffers read better than zipped iterators in the numeric code.
#![allow(clippy::needless_range_loop)]

pub mod autograd;
pub mod beam;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod data_model;
pub mod generator;
pub mod gradcheck;
pub mod ingest;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod tensor;
pub mod tokenizer;
