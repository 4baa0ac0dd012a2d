//! End-to-end commands: prepare splits, learn Semantic-IDs, train the generator, evaluate and
//! analyze clusters. Every command validates its configuration and inputs before writing, and
//! each output file is written to a temporary sibling and renamed into place.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::ParamStore;
use crate::beam::{beam_search, beams_to_trajectories, greedy_decode, step_items, PrefixTrie};
use crate::checkpoint::{Checkpoint, CheckpointError, CheckpointKind};
use crate::codec::{
    analyze_hierarchy, assign_semantic_ids, train_rqvae, CodeMap, Codebooks, CodecConfig,
    CodecError, EncoderDecoder, ItemFeatures,
};
use crate::config::{ConfigError, RunConfig, Seeds};
use crate::data_model::FutureTarget;
use crate::generator::{train, GenError, Generator, ModelConfig, TrainConfig, TrainExample};
use crate::ingest::{
    filter_users, parse_interactions, read_item_table, read_splits, split_leave_k, subsample_users,
    write_item_table, write_splits, IngestError, ItemTable, Segment, SplitExample,
};
use crate::metrics::{evaluate, step_hr, EvalReport, MetricError};
use crate::tensor::Matrix;
use crate::tokenizer::{
    tokenize_history, tokenize_target, TokenSequence, TokenizeError, Vocabulary,
};

pub const ITEMS_FILE: &str = "items.csv";
pub const SPLITS_FILE: &str = "splits.jsonl";
pub const PREPARE_STATS_FILE: &str = "prepare_stats.json";
pub const CODEC_CKPT_FILE: &str = "codec.ckpt";
pub const CODEMAP_FILE: &str = "codemap.csv";
pub const CODEC_LOSS_FILE: &str = "codec_loss.csv";
pub const MODEL_CKPT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const METRICS_JSON_FILE: &str = "metrics.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const CLUSTERS_FILE: &str = "clusters.csv";

/// Greedy 1st_HR at this cutoff selects the best validation epoch.
pub const VALIDATION_CUTOFF: usize = 10;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    Ingest {
        path: PathBuf,
        #[source]
        source: IngestError,
    },
    #[error("{}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("required input {} does not exist; run the earlier pipeline step first", .0.display())]
    MissingArtifact(PathBuf),
    #[error("artifacts disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Generator(#[from] GenError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl PipelineError {
    /// Errors in the configuration itself, including inputs it names that do not exist.
    pub fn is_config_error(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, e: impl ToString) -> PipelineError {
    PipelineError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes `path` through a temporary file in the same directory and renames it into place.
fn write_atomic<F>(path: &Path, f: F) -> Result<(), PipelineError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), PipelineError>,
{
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        f(&mut w)?;
        w.flush().map_err(io_err(path))?;
    }
    tmp.persist(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), PipelineError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| format_err(path, e))?;
        w.write_all(b"\n").map_err(io_err(path))
    })
}

fn require(path: PathBuf) -> Result<PathBuf, PipelineError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact(path))
    }
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    Ok(BufReader::new(File::open(path).map_err(io_err(path))?))
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn config_input(path: &Option<PathBuf>, key: &str) -> Result<Option<PathBuf>, PipelineError> {
    match path {
        Some(p) if !p.is_file() => {
            Err(ConfigError::Invalid(format!("{key} {} does not exist", p.display())).into())
        }
        other => Ok(other.clone()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogCounts {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub before: CatalogCounts,
    pub after_filter: CatalogCounts,
    pub kept: CatalogCounts,
    pub min_history: usize,
    pub horizon: usize,
    pub train_examples: usize,
    pub valid_examples: usize,
    pub test_examples: usize,
}

/// Parses the raw log, drops users with fewer than `3k + 1` interactions, optionally subsamples,
/// and writes the item table, the leave-k-out splits and their statistics.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PrepareSummary, PipelineError> {
    cfg.validate()?;
    let path = config_input(&cfg.data.path, "data.path")?
        .ok_or_else(|| ConfigError::Invalid("data.path is required for prepare".into()))?;
    let ingest = |source| PipelineError::Ingest {
        path: path.clone(),
        source,
    };
    let k = cfg.data.horizon;
    let log = parse_interactions(open(&path)?, cfg.data.format).map_err(ingest)?;
    let counts = |l: &crate::ingest::InteractionLog| CatalogCounts {
        users: l.num_users(),
        items: l.catalog_size(),
        interactions: l.num_interactions(),
    };
    let before = counts(&log);
    let filtered = filter_users(&log, k).map_err(ingest)?;
    let after_filter = counts(&filtered);
    let kept_log = match cfg.data.max_users {
        Some(m) => subsample_users(&filtered, m, cfg.seeds.data),
        None => filtered,
    };
    if kept_log.num_users() == 0 {
        warn!(
            "no user has at least {} interactions",
            crate::ingest::min_history_len(k)
        );
    }
    let kept = counts(&kept_log);
    let splits = split_leave_k(&kept_log, k, cfg.data.augment).map_err(ingest)?;
    let n_seg = |s| splits.iter().filter(|e| e.segment == s).count();
    let summary = PrepareSummary {
        before,
        after_filter,
        kept,
        min_history: crate::ingest::min_history_len(k),
        horizon: k,
        train_examples: n_seg(Segment::Train),
        valid_examples: n_seg(Segment::Valid),
        test_examples: n_seg(Segment::Test),
    };

    let out = ensure_out_dir(cfg)?;
    let items_path = out.join(ITEMS_FILE);
    write_atomic(&items_path, |w| {
        write_item_table(w, &kept_log).map_err(|e| format_err(&items_path, e))
    })?;
    let splits_path = out.join(SPLITS_FILE);
    write_atomic(&splits_path, |w| {
        write_splits(w, &splits).map_err(io_err(&splits_path))
    })?;
    write_json(
        &out.join(PREPARE_STATS_FILE),
        &serde_json::json!({ "summary": summary, "seeds": cfg.seeds, "augment": cfg.data.augment }),
    )?;
    info!(
        "prepare: {} users / {} items before filtering, {} / {} after, {} kept",
        summary.before.users,
        summary.before.items,
        summary.after_filter.users,
        summary.after_filter.items,
        summary.kept.users
    );
    Ok(summary)
}

fn read_items(out: &Path) -> Result<ItemTable, PipelineError> {
    let path = require(out.join(ITEMS_FILE))?;
    read_item_table(open(&path)?).map_err(|source| PipelineError::Ingest { path, source })
}

/// Reads `raw_key,f1,...,fd` rows (with a header) and orders them by item id.
fn read_features(
    path: &Path,
    items: &ItemTable,
    dim: usize,
) -> Result<ItemFeatures, PipelineError> {
    let mut rd = csv::Reader::from_reader(open(path)?);
    let mut rows: std::collections::HashMap<String, Vec<f64>> = std::collections::HashMap::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format_err(path, e))?;
        let key = rec.get(0).unwrap_or_default().to_string();
        let vals: Result<Vec<f64>, _> = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>())
            .collect();
        let vals = vals.map_err(|e| format_err(path, format!("line {line}: {e}")))?;
        if vals.len() != dim {
            return Err(format_err(
                path,
                format!("line {line}: {} features, expected {dim}", vals.len()),
            ));
        }
        rows.insert(key, vals);
    }
    let mut data = Vec::with_capacity(items.keys.len() * dim);
    for key in &items.keys {
        let v = rows
            .get(key)
            .ok_or_else(|| format_err(path, format!("no features for item {key}")))?;
        data.extend_from_slice(v);
    }
    Ok(ItemFeatures::from_matrix(Matrix::from_vec(
        items.keys.len(),
        dim,
        data,
    ))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecMeta {
    pub codec: CodecConfig,
    pub collision_position: bool,
    pub position_sizes: Vec<usize>,
    pub vocab_offsets: Vec<usize>,
    pub items: usize,
    pub seeds: Seeds,
    pub recon_mse: f64,
    pub utilization: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodesSummary {
    pub items: usize,
    pub initial_recon_mse: f64,
    pub recon_mse: f64,
    pub utilization: Vec<usize>,
    pub level_sizes: Vec<usize>,
    pub collisions: usize,
}

/// Trains the RQ-VAE on item features and writes the codec checkpoint, the code map and the
/// per-epoch loss log.
pub fn cmd_train_codes(cfg: &RunConfig) -> Result<CodesSummary, PipelineError> {
    cfg.validate()?;
    let features_path = config_input(&cfg.codec.features_path, "codec.features_path")?;
    let out = cfg.output.dir.clone();
    let items = read_items(&out)?;
    let ccfg = cfg.codec_config();
    let features = match &features_path {
        Some(p) => read_features(p, &items, ccfg.input_dim)?,
        None => ItemFeatures::random(items.keys.len(), ccfg.input_dim, cfg.seeds.data),
    };
    let trained = train_rqvae(&features, &ccfg)?;
    let map = assign_semantic_ids(
        &features,
        &trained.model,
        &trained.books,
        cfg.codec.collision_position,
    )?;
    let vocab = Vocabulary::for_code_map(&map);
    let recon_mse = trained.recon_mse(&features.matrix);
    let utilization = trained.utilization(&features.matrix);
    let summary = CodesSummary {
        items: map.num_items(),
        initial_recon_mse: trained.history.first().map_or(recon_mse, |e| e.recon_mse),
        recon_mse,
        utilization: utilization.clone(),
        level_sizes: ccfg.level_sizes.clone(),
        collisions: map.collisions(),
    };
    let meta = CodecMeta {
        codec: ccfg,
        collision_position: cfg.codec.collision_position,
        position_sizes: vocab.position_sizes().to_vec(),
        vocab_offsets: vocab.offsets().to_vec(),
        items: map.num_items(),
        seeds: cfg.seeds,
        recon_mse,
        utilization,
    };
    let mut params = trained.model.params.clone();
    for (l, book) in trained.books.levels().iter().enumerate() {
        params.add(format!("codebook.{l}"), book.clone());
    }
    let ckpt = Checkpoint {
        kind: CheckpointKind::Codec,
        meta: serde_json::to_value(&meta).expect("codec metadata serializes"),
        params,
    };

    let ckpt_path = out.join(CODEC_CKPT_FILE);
    write_atomic(&ckpt_path, |w| {
        w.write_all(&ckpt.encode()).map_err(io_err(&ckpt_path))
    })?;
    let map_path = out.join(CODEMAP_FILE);
    write_atomic(&map_path, |w| {
        map.write_csv(w).map_err(|e| format_err(&map_path, e))
    })?;
    let loss_path = out.join(CODEC_LOSS_FILE);
    write_atomic(&loss_path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        let fail = |e: csv::Error| format_err(&loss_path, e);
        wr.write_record(["epoch", "total", "recon", "commit", "recon_mse"])
            .map_err(fail)?;
        for e in &trained.history {
            wr.write_record([
                e.epoch.to_string(),
                e.total.to_string(),
                e.recon.to_string(),
                e.commit.to_string(),
                e.recon_mse.to_string(),
            ])
            .map_err(|e| format_err(&loss_path, e))?;
        }
        wr.flush().map_err(io_err(&loss_path))
    })?;
    info!(
        "train-codes: recon MSE {:.6}, utilization {:?}",
        summary.recon_mse, summary.utilization
    );
    Ok(summary)
}

/// Codec checkpoint contents needed downstream.
pub struct LoadedCodec {
    pub meta: CodecMeta,
    pub model: EncoderDecoder,
    pub books: Codebooks,
    pub params_hash: String,
}

pub fn load_codec(out: &Path) -> Result<LoadedCodec, PipelineError> {
    let path = require(out.join(CODEC_CKPT_FILE))?;
    let ck_err = |source| PipelineError::Checkpoint {
        path: path.clone(),
        source,
    };
    let ckpt = Checkpoint::read(&path)
        .and_then(|c| c.expect_kind(CheckpointKind::Codec))
        .map_err(ck_err)?;
    let meta: CodecMeta = serde_json::from_value(ckpt.meta.clone())
        .map_err(|e| ck_err(CheckpointError::BadHeader(e.to_string())))?;
    let params_hash = ckpt.params.content_hash();
    let mut model_params = ParamStore::new();
    let mut levels = Vec::new();
    for (name, value) in ckpt.params.names().iter().zip(ckpt.params.values()) {
        if name.starts_with("codebook.") {
            levels.push(value.clone());
        } else {
            model_params.add(name.clone(), value.clone());
        }
    }
    let model = EncoderDecoder::from_params(model_params).ok_or_else(|| {
        ck_err(CheckpointError::BadHeader(
            "missing encoder or decoder".into(),
        ))
    })?;
    let books = Codebooks::new(levels)?;
    Ok(LoadedCodec {
        meta,
        model,
        books,
        params_hash,
    })
}

fn load_code_map(
    out: &Path,
    position_sizes: &[usize],
) -> Result<(CodeMap, Vocabulary), PipelineError> {
    let path = require(out.join(CODEMAP_FILE))?;
    let map = CodeMap::read_csv(open(&path)?, Some(position_sizes.to_vec()))
        .map_err(|e| format_err(&path, e))?;
    let vocab = Vocabulary::for_code_map(&map);
    Ok((map, vocab))
}

fn load_splits(out: &Path) -> Result<Vec<SplitExample>, PipelineError> {
    let path = require(out.join(SPLITS_FILE))?;
    read_splits(open(&path)?).map_err(|source| PipelineError::Ingest { path, source })
}

fn check_horizon(splits: &[SplitExample], k: usize) -> Result<(), PipelineError> {
    match splits.iter().find(|e| e.target.horizon() != k) {
        Some(e) => Err(PipelineError::Mismatch(format!(
            "splits have horizon {} but data.horizon is {k}",
            e.target.horizon()
        ))),
        None => Ok(()),
    }
}

fn source_tokens(
    ex: &SplitExample,
    map: &CodeMap,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenSequence, TokenizeError> {
    let full = tokenize_history(&ex.input, map, vocab, max_len)?;
    let content = full.content().to_vec();
    Ok(TokenSequence {
        mask: vec![1; content.len()],
        tokens: content,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: Seeds,
    pub horizon: usize,
    pub position_sizes: Vec<usize>,
    pub codec_params_hash: String,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainGenSummary {
    pub train_examples: usize,
    pub valid_examples: usize,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
    pub final_loss: f64,
    pub stopped_early: bool,
}

/// Greedy-decoded 1st_HR at [`VALIDATION_CUTOFF`] over `examples`.
pub fn greedy_first_step_hr(
    model: &Generator,
    examples: &[(TokenSequence, FutureTarget)],
    map: &CodeMap,
    vocab: &Vocabulary,
    horizon: usize,
) -> Result<f64, PipelineError> {
    let max_len = horizon * vocab.code_len() + 1;
    let mut preds = Vec::with_capacity(examples.len());
    let mut truths = Vec::with_capacity(examples.len());
    for (src, truth) in examples {
        let g = greedy_decode(model, src, max_len)?;
        preds.push(beams_to_trajectories(
            &[g],
            map,
            vocab,
            horizon,
            VALIDATION_CUTOFF,
        ));
        truths.push(truth.clone());
    }
    Ok(step_hr(&preds, &truths, 1, VALIDATION_CUTOFF)?)
}

/// Trains the generator on the train split with validation-based checkpoint selection and
/// writes the checkpoint and the per-epoch log.
pub fn cmd_train_gen(cfg: &RunConfig) -> Result<TrainGenSummary, PipelineError> {
    cfg.validate()?;
    let out = cfg.output.dir.clone();
    let codec = load_codec(&out)?;
    let (map, vocab) = load_code_map(&out, &codec.meta.position_sizes)?;
    let splits = load_splits(&out)?;
    let k = cfg.data.horizon;
    check_horizon(&splits, k)?;
    let mcfg = cfg.model_config(vocab.size(), vocab.code_len());
    let tcfg = cfg.train_config();

    let mut train_set = Vec::new();
    let mut valid_set = Vec::new();
    for ex in &splits {
        let src = source_tokens(ex, &map, &vocab, mcfg.max_source_len)?;
        match ex.segment {
            Segment::Train => train_set.push(TrainExample {
                source: src.tokens,
                target: tokenize_target(&ex.target, &map, &vocab)?.tokens,
            }),
            Segment::Valid => valid_set.push((src, ex.target.clone())),
            Segment::Test => {}
        }
    }
    if let Some(m) = cfg.train.max_valid_users {
        valid_set.truncate(m);
    }
    let model = Generator::new(mcfg.clone())?;
    let mut val_error = None;
    let outcome = train(model, &train_set, &tcfg, |m| {
        match greedy_first_step_hr(m, &valid_set, &map, &vocab, k) {
            Ok(v) => v,
            Err(e) => {
                val_error.get_or_insert(e);
                f64::NEG_INFINITY
            }
        }
    })?;
    if let Some(e) = val_error {
        return Err(e);
    }
    let summary = TrainGenSummary {
        train_examples: train_set.len(),
        valid_examples: valid_set.len(),
        epochs_run: outcome.log.len(),
        best_epoch: outcome.best_epoch,
        best_metric: outcome.best_metric,
        final_loss: outcome.log.last().map_or(f64::NAN, |e| e.loss),
        stopped_early: outcome.stopped_early,
    };
    let meta = GeneratorMeta {
        model: mcfg,
        train: tcfg,
        seeds: cfg.seeds,
        horizon: k,
        position_sizes: vocab.position_sizes().to_vec(),
        codec_params_hash: codec.params_hash,
        epochs_run: summary.epochs_run,
        best_epoch: summary.best_epoch,
        best_metric: summary.best_metric,
    };
    let ckpt = Checkpoint {
        kind: CheckpointKind::Generator,
        meta: serde_json::to_value(&meta).expect("generator metadata serializes"),
        params: outcome.model.into_params(),
    };
    let ckpt_path = out.join(MODEL_CKPT_FILE);
    write_atomic(&ckpt_path, |w| {
        w.write_all(&ckpt.encode()).map_err(io_err(&ckpt_path))
    })?;
    let log_path = out.join(TRAIN_LOG_FILE);
    write_atomic(&log_path, |w| {
        writeln!(w, "epoch,loss,val_metric").map_err(io_err(&log_path))?;
        for e in &outcome.log {
            let val = e.val_metric.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{}", e.epoch, e.loss, val).map_err(io_err(&log_path))?;
        }
        Ok(())
    })?;
    info!(
        "train-gen: {} epochs, best epoch {:?} (val {:?})",
        summary.epochs_run, summary.best_epoch, summary.best_metric
    );
    Ok(summary)
}

pub struct LoadedGenerator {
    pub meta: GeneratorMeta,
    pub model: Generator,
    pub params_hash: String,
}

pub fn load_generator(out: &Path) -> Result<LoadedGenerator, PipelineError> {
    let path = require(out.join(MODEL_CKPT_FILE))?;
    let ck_err = |source| PipelineError::Checkpoint {
        path: path.clone(),
        source,
    };
    let ckpt = Checkpoint::read(&path)
        .and_then(|c| c.expect_kind(CheckpointKind::Generator))
        .map_err(ck_err)?;
    let meta: GeneratorMeta = serde_json::from_value(ckpt.meta.clone())
        .map_err(|e| ck_err(CheckpointError::BadHeader(e.to_string())))?;
    let params_hash = ckpt.params.content_hash();
    let model = Generator::from_params(meta.model.clone(), ckpt.params)?;
    Ok(LoadedGenerator {
        meta,
        model,
        params_hash,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PredictionRecord {
    user: String,
    steps: Vec<Vec<u32>>,
    beam_logprobs: Vec<f64>,
}

/// Beam-searches the test split and writes the metric report and per-user predictions.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalReport, PipelineError> {
    cfg.validate()?;
    let out = cfg.output.dir.clone();
    let codec = load_codec(&out)?;
    let gen = load_generator(&out)?;
    if gen.meta.codec_params_hash != codec.params_hash
        || gen.meta.position_sizes != codec.meta.position_sizes
    {
        return Err(PipelineError::Mismatch(
            "model checkpoint was trained against a different codec checkpoint".into(),
        ));
    }
    let (map, vocab) = load_code_map(&out, &codec.meta.position_sizes)?;
    if gen.model.config().vocab_size != vocab.size() {
        return Err(PipelineError::Mismatch(format!(
            "model vocabulary {} but code map implies {}",
            gen.model.config().vocab_size,
            vocab.size()
        )));
    }
    let k = gen.meta.horizon;
    if k != cfg.data.horizon {
        return Err(PipelineError::Mismatch(format!(
            "model was trained for horizon {k} but data.horizon is {}",
            cfg.data.horizon
        )));
    }
    let splits = load_splits(&out)?;
    check_horizon(&splits, k)?;
    let mut test: Vec<&SplitExample> = splits
        .iter()
        .filter(|e| e.segment == Segment::Test)
        .collect();
    if let Some(m) = cfg.eval.max_users {
        test.truncate(m);
    }
    let max_len = k * vocab.code_len() + 1;
    let cutoff = cfg.eval.cutoffs.iter().copied().max().unwrap_or(1);
    let trie = cfg
        .eval
        .constrained
        .then(|| PrefixTrie::new(&map, &vocab, k));
    let mut preds = Vec::with_capacity(test.len());
    let mut truths = Vec::with_capacity(test.len());
    let mut records = Vec::with_capacity(test.len());
    for ex in test {
        let src = source_tokens(ex, &map, &vocab, gen.model.config().max_source_len)?;
        let beams = beam_search(
            &gen.model,
            &src,
            cfg.eval.beam_size,
            max_len,
            trie.as_ref().map(|t| (t, &vocab)),
        )?;
        let lists = beams_to_trajectories(&beams, &map, &vocab, k, cutoff);
        records.push(PredictionRecord {
            user: ex.user.clone(),
            steps: step_items(&lists)
                .into_iter()
                .map(|s| s.into_iter().map(|i| i.0).collect())
                .collect(),
            beam_logprobs: beams.iter().map(|b| b.logprob).collect(),
        });
        preds.push(lists);
        truths.push(ex.target.clone());
    }
    let report = evaluate(&preds, &truths, &cfg.eval.cutoffs)?;

    let csv_path = out.join(METRICS_CSV_FILE);
    write_atomic(&csv_path, |w| {
        report.write_csv(w).map_err(|e| format_err(&csv_path, e))
    })?;
    let mut json = report.to_json();
    json["seeds"] = serde_json::to_value(gen.meta.seeds).expect("seeds serialize");
    json["beam_size"] = cfg.eval.beam_size.into();
    json["constrained"] = cfg.eval.constrained.into();
    write_json(&out.join(METRICS_JSON_FILE), &json)?;
    let pred_path = out.join(PREDICTIONS_FILE);
    write_atomic(&pred_path, |w| {
        for r in &records {
            serde_json::to_writer(&mut *w, r).map_err(|e| format_err(&pred_path, e))?;
            w.write_all(b"\n").map_err(io_err(&pred_path))?;
        }
        Ok(())
    })?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeSummary {
    pub l1_clusters: usize,
    pub items: usize,
}

/// Writes category histograms of level-1 clusters and their level-2 sub-clusters.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<AnalyzeSummary, PipelineError> {
    cfg.validate()?;
    let out = cfg.output.dir.clone();
    let codec = load_codec(&out)?;
    let (map, _) = load_code_map(&out, &codec.meta.position_sizes)?;
    let items = read_items(&out)?;
    if items.keys.len() != map.num_items() {
        return Err(PipelineError::Mismatch(format!(
            "item table has {} items but code map has {}",
            items.keys.len(),
            map.num_items()
        )));
    }
    let report = analyze_hierarchy(&map, &items.categories)?;
    let path = out.join(CLUSTERS_FILE);
    write_atomic(&path, |w| {
        report.write_csv(w).map_err(|e| format_err(&path, e))
    })?;
    Ok(AnalyzeSummary {
        l1_clusters: report.clusters.len(),
        items: map.num_items(),
    })
}

/// Lines of a JSONL file, for callers inspecting predictions.
pub fn read_lines(path: &Path) -> Result<Vec<String>, PipelineError> {
    open(path)?
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(path))
}
