//! Run configuration: a TOML file plus `GCB_<SECTION>_<KEY>` environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecConfig;
use crate::generator::{ModelConfig, TrainConfig};
use crate::ingest::InputFormat;

pub const ENV_PREFIX: &str = "GCB_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("environment override {var}: {reason}")]
    Override { var: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Raw interaction log; required by `prepare`.
    pub path: Option<PathBuf>,
    pub format: InputFormat,
    /// Items to predict per user.
    pub horizon: usize,
    /// Random user subsample after filtering.
    pub max_users: Option<usize>,
    /// Newest history items kept in the encoder input.
    pub max_history_items: usize,
    /// Add every shorter training prefix as an extra example.
    pub augment: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            format: InputFormat::Jsonl,
            horizon: 1,
            max_users: None,
            max_history_items: 20,
            augment: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    /// CSV of `raw_key,f1,...,fd`; random features when absent.
    pub features_path: Option<PathBuf>,
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub level_sizes: Vec<usize>,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub kmeans_iters: usize,
    pub collision_position: bool,
}

impl Default for CodecSection {
    fn default() -> Self {
        let c = CodecConfig::default();
        Self {
            features_path: None,
            input_dim: c.input_dim,
            latent_dim: c.latent_dim,
            encoder_hidden: c.encoder_hidden,
            decoder_hidden: c.decoder_hidden,
            level_sizes: c.level_sizes,
            beta: c.beta,
            lr: c.lr,
            epochs: c.epochs,
            batch_size: c.batch_size,
            kmeans_iters: c.kmeans_iters,
            collision_position: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub hidden: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            enc_layers: m.enc_layers,
            dec_layers: m.dec_layers,
            hidden: m.hidden,
            ff_dim: m.ff_dim,
            heads: m.heads,
            dropout: m.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub patience: usize,
    pub eval_interval: usize,
    pub max_grad_norm: Option<f64>,
    /// Validation users scored per evaluation; all when absent.
    pub max_valid_users: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            warmup_epochs: t.warmup_epochs,
            patience: t.patience,
            eval_interval: t.eval_interval,
            max_grad_norm: t.max_grad_norm,
            max_valid_users: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub beam_size: usize,
    pub cutoffs: Vec<usize>,
    /// Restrict decoding to token paths that spell real items.
    pub constrained: bool,
    /// Test users evaluated; all when absent.
    pub max_users: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            beam_size: 20,
            cutoffs: vec![5, 10],
            constrained: false,
            max_users: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    /// User subsampling and random item features.
    pub data: u64,
    pub codec: u64,
    /// Generator initialization, batch order and dropout.
    pub model: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub codec: CodecSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub seeds: Seeds,
    pub output: OutputSection,
}

fn parse_override(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    /// Parses TOML text and applies overrides from `env` (name, value) pairs.
    pub fn from_toml_with_env<I>(text: &str, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut vars: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        vars.sort();
        for (var, value) in vars {
            let rest = var[ENV_PREFIX.len()..].to_ascii_lowercase();
            let Some((section, key)) = rest.split_once('_') else {
                return Err(ConfigError::Override {
                    var,
                    reason: "expected GCB_<SECTION>_<KEY>".into(),
                });
            };
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let Some(sec) = entry.as_table_mut() else {
                return Err(ConfigError::Override {
                    var,
                    reason: format!("`{section}` is not a section"),
                });
            };
            sec.insert(key.to_string(), parse_override(&value));
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    /// Reads `path` (defaults when `None`) and applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn set_all_seeds(&mut self, seed: u64) {
        self.seeds = Seeds {
            data: seed,
            codec: seed,
            model: seed,
        };
    }

    pub fn codec_config(&self) -> CodecConfig {
        let c = &self.codec;
        CodecConfig {
            input_dim: c.input_dim,
            latent_dim: c.latent_dim,
            encoder_hidden: c.encoder_hidden.clone(),
            decoder_hidden: c.decoder_hidden.clone(),
            level_sizes: c.level_sizes.clone(),
            beta: c.beta,
            lr: c.lr,
            epochs: c.epochs,
            batch_size: c.batch_size,
            kmeans_iters: c.kmeans_iters,
            seed: self.seeds.codec,
        }
    }

    /// Semantic-ID length implied by the codec settings.
    pub fn code_len(&self) -> usize {
        self.codec.level_sizes.len() + usize::from(self.codec.collision_position)
    }

    pub fn model_config(&self, vocab_size: usize, code_len: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            vocab_size,
            enc_layers: m.enc_layers,
            dec_layers: m.dec_layers,
            hidden: m.hidden,
            ff_dim: m.ff_dim,
            heads: m.heads,
            dropout: m.dropout,
            max_source_len: self.data.max_history_items * code_len,
            max_target_len: self.data.horizon * code_len + 1,
            seed: self.seeds.model,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            warmup_epochs: t.warmup_epochs,
            patience: t.patience,
            eval_interval: t.eval_interval,
            max_grad_norm: t.max_grad_norm,
            seed: self.seeds.model,
        }
    }

    /// Checks every section without touching the filesystem.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.data.horizon == 0 {
            return invalid("data.horizon must be at least 1".into());
        }
        if self.data.max_history_items == 0 {
            return invalid("data.max_history_items must be at least 1".into());
        }
        if self.data.max_users == Some(0) {
            return invalid("data.max_users must be at least 1".into());
        }
        self.codec_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("codec: {e}")))?;
        let code_len = self.code_len();
        self.model_config(1, code_len)
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("model: {e}")))?;
        self.train_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("train: {e}")))?;
        if self.eval.beam_size == 0 {
            return invalid("eval.beam_size must be at least 1".into());
        }
        if self.eval.cutoffs.is_empty() || self.eval.cutoffs.contains(&0) {
            return invalid("eval.cutoffs must be non-empty and positive".into());
        }
        if self.output.dir.as_os_str().is_empty() {
            return invalid("output.dir is empty".into());
        }
        Ok(())
    }
}
