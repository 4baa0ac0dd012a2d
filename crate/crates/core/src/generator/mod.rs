//! Encoder-decoder transformer over Semantic-ID tokens, with teacher-forced training.

mod model;
mod train;

pub use model::{nll_loss, Generator, NllValue};
pub use train::{
    grad_check, teacher_forced_loss, train, EarlyStopper, EpochLog, TrainExample, TrainOutcome,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("loss became non-finite in epoch {0}")]
    NonFiniteLoss(usize),
    #[error("gradient check failed for {tensor}: relative error {err:e}")]
    GradMismatch { tensor: String, err: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub hidden: usize,
    pub ff_dim: usize,
    /// Per-head width is `hidden / heads` rounded down; heads are projected back to `hidden`.
    pub heads: usize,
    pub dropout: f64,
    /// Encoder positional table size.
    pub max_source_len: usize,
    /// Decoder positional table size; must cover `k * L_c + 1`.
    pub max_target_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            enc_layers: 4,
            dec_layers: 4,
            hidden: 128,
            ff_dim: 1024,
            heads: 6,
            dropout: 0.1,
            max_source_len: 80,
            max_target_len: 13,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads.max(1)
    }

    /// Width of the concatenated head outputs.
    pub fn attn_dim(&self) -> usize {
        self.head_dim() * self.heads
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("hidden", self.hidden),
            ("ff_dim", self.ff_dim),
            ("heads", self.heads),
            ("max_source_len", self.max_source_len),
            ("max_target_len", self.max_target_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(GenError::BadConfig(format!("{name} must be at least 1")));
            }
        }
        if self.heads > self.hidden {
            return Err(GenError::BadConfig(format!(
                "{} heads leave no width out of hidden {}",
                self.heads, self.hidden
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GenError::BadConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs at the start with no validation.
    pub warmup_epochs: usize,
    /// Evaluations without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    /// Epochs between validation runs after warm-up.
    pub eval_interval: usize,
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 32,
            epochs: 300,
            warmup_epochs: 50,
            patience: 10,
            eval_interval: 1,
            max_grad_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(GenError::BadConfig(format!("learning rate {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(GenError::BadConfig("batch_size must be at least 1".into()));
        }
        if self.eval_interval == 0 {
            return Err(GenError::BadConfig(
                "eval_interval must be at least 1".into(),
            ));
        }
        if let Some(n) = self.max_grad_norm {
            if n.is_nan() || n <= 0.0 {
                return Err(GenError::BadConfig(format!("max_grad_norm {n}")));
            }
        }
        Ok(())
    }
}
