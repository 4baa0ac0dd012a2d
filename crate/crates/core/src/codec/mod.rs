//! Learning the discrete Semantic-ID space: k-means, residual quantization, the RQ-VAE and
//! collision-resolved id assignment.

pub mod hierarchy;
pub mod kmeans;
pub mod quantize;
pub mod rqvae;
pub mod semantic_id;

use thiserror::Error;

use crate::data_model::ItemId;

pub use hierarchy::{analyze_hierarchy, ClusterReport};
pub use kmeans::{kmeans, kmeans_restarts, KMeansResult};
pub use quantize::{init_codebooks, quantize, Codebooks, QuantizationResult};
pub use rqvae::{
    grad_check, rqvae_loss, train_rqvae, CodecConfig, EncoderDecoder, ItemFeatures, TrainedCodec,
};
pub use semantic_id::{assign_semantic_ids, CodeMap, SemanticId};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("no input points")]
    EmptyInput,
    #[error("cluster count must be at least 1")]
    ZeroClusters,
    #[error("at least one quantization level is required")]
    NoLevels,
    #[error("quantization level {0} has size 0")]
    BadLevelSize(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("items {first} and {second} share a Semantic-ID")]
    Collision { first: ItemId, second: ItemId },
    #[error("invalid code map: {0}")]
    BadCodeMap(String),
    #[error("no item has a category")]
    NoCategories,
    #[error("invalid codec configuration: {0}")]
    BadConfig(String),
    #[error("gradient check failed on {tensor}: relative error {err:e}")]
    GradMismatch { tensor: String, err: f64 },
}
