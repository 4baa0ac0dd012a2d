use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use gcb_core::config::RunConfig;
use gcb_core::data_model::ItemId;
use gcb_core::data_model::RankedStepList;
use gcb_core::ingest::{read_splits, write_splits, Segment};
use gcb_core::metrics::{step_hr, EvalReport};
use gcb_core::pipeline::{self, PREDICTIONS_FILE, SPLITS_FILE};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

type Log = Vec<(String, String, i64)>;

fn write_jsonl(path: &Path, log: &Log, amazon_keys: bool) {
    let (u, i, t) = if amazon_keys {
        ("reviewerID", "asin", "unixReviewTime")
    } else {
        ("user", "item", "ts")
    };
    let mut text = String::new();
    for (user, item, ts) in log {
        text.push_str(&format!(
            "{{\"{u}\":\"{user}\",\"{i}\":\"{item}\",\"{t}\":{ts}}}\n"
        ));
    }
    fs::write(path, text).expect("write log");
}

/// Users walking a fixed permutation of `items` items from random starting points.
fn markov_log(users: usize, items: usize, len: usize, seed: u64) -> Log {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next: Vec<usize> = (0..items).collect();
    next.shuffle(&mut rng);
    let mut log = Vec::new();
    for u in 0..users {
        let mut cur = rng.random_range(0..items);
        for t in 0..len {
            log.push((
                format!("u{u:04}"),
                format!("item{cur:02}"),
                1_000 + t as i64,
            ));
            cur = next[cur];
        }
    }
    log
}

fn base_config(dir: &Path, data: &Path, horizon: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.path = Some(data.to_path_buf());
    cfg.data.horizon = horizon;
    cfg.output.dir = dir.join("out");
    cfg.seeds.data = 11;
    cfg.seeds.codec = 12;
    cfg.seeds.model = 13;
    cfg.codec.input_dim = 16;
    cfg.codec.latent_dim = 8;
    cfg.codec.encoder_hidden = vec![32];
    cfg.codec.decoder_hidden = vec![32];
    cfg.codec.level_sizes = vec![8, 8];
    cfg.codec.epochs = 50;
    cfg
}

fn run_all(cfg: &RunConfig, after_prepare: impl FnOnce(&Path)) -> Result<EvalReport, String> {
    pipeline::cmd_prepare(cfg).map_err(|e| e.to_string())?;
    after_prepare(&cfg.output.dir);
    pipeline::cmd_train_codes(cfg).map_err(|e| e.to_string())?;
    pipeline::cmd_train_gen(cfg).map_err(|e| e.to_string())?;
    pipeline::cmd_evaluate(cfg).map_err(|e| e.to_string())
}

/// Permutes train and validation targets across users, leaving inputs and the test split intact.
fn shuffle_targets(out: &Path) {
    let path = out.join(SPLITS_FILE);
    let mut splits = read_splits(fs::read(&path).unwrap().as_slice()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seg in [Segment::Train, Segment::Valid] {
        let idx: Vec<usize> = (0..splits.len())
            .filter(|&i| splits[i].segment == seg)
            .collect();
        let mut targets: Vec<_> = idx.iter().map(|&i| splits[i].target.clone()).collect();
        targets.shuffle(&mut rng);
        for (&i, t) in idx.iter().zip(targets) {
            splits[i].target = t;
        }
    }
    let mut buf = Vec::new();
    write_splits(&mut buf, &splits).unwrap();
    fs::write(path, buf).unwrap();
}

fn markov_config(dir: &Path, data: &Path) -> RunConfig {
    let mut cfg = base_config(dir, data, 2);
    cfg.data.max_history_items = 4;
    cfg.model.enc_layers = 2;
    cfg.model.dec_layers = 2;
    cfg.model.hidden = 64;
    cfg.model.ff_dim = 128;
    cfg.model.heads = 4;
    cfg.model.dropout = 0.0;
    cfg.train.lr = 1e-3;
    cfg.train.batch_size = 32;
    cfg.train.epochs = 150;
    cfg.train.warmup_epochs = 20;
    cfg.train.eval_interval = 3;
    cfg.train.patience = 6;
    cfg.train.max_valid_users = Some(100);
    cfg.eval.beam_size = 10;
    cfg.eval.cutoffs = vec![1, 5];
    cfg
}

pub fn overfit() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("markov.jsonl");
    write_jsonl(&data, &markov_log(400, 50, 10, 21), false);

    let start = Instant::now();
    let cfg = markov_config(tmp.path(), &data);
    let report = run_all(&cfg, |_| {})?;
    let learned_secs = start.elapsed().as_secs_f64();
    let hr1 = report.get("1st_HR@1").unwrap_or(f64::NAN);
    let shr5 = report.get("SHR@5").unwrap_or(f64::NAN);

    let control_dir = tmp.path().join("control");
    fs::create_dir_all(&control_dir).map_err(|e| e.to_string())?;
    let control = markov_config(&control_dir, &data);
    let shuffled = run_all(&control, shuffle_targets)?;
    let control_hr5 = shuffled.get("1st_HR@5").unwrap_or(f64::NAN);

    let detail = format!(
        "learned: 1st_HR@1 {hr1:.3}, SHR@5 {shr5:.3} ({learned_secs:.0}s); shuffled targets: 1st_HR@5 {control_hr5:.3}"
    );
    ensure(hr1 >= 0.95 && shr5 >= 0.90 && control_hr5 <= 0.15, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn small_config(dir: &Path, data: &Path) -> RunConfig {
    let mut cfg = base_config(dir, data, 2);
    cfg.data.max_history_items = 5;
    cfg.model.enc_layers = 1;
    cfg.model.dec_layers = 1;
    cfg.model.hidden = 16;
    cfg.model.ff_dim = 32;
    cfg.model.heads = 2;
    cfg.train.epochs = 8;
    cfg.train.warmup_epochs = 3;
    cfg.train.batch_size = 16;
    cfg.eval.beam_size = 8;
    cfg
}

pub fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("log.jsonl");
    write_jsonl(&data, &markov_log(60, 30, 9, 5), true);
    let mut fingerprints = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        let cfg = small_config(&dir, &data);
        run_all(&cfg, |_| {})?;
        pipeline::cmd_analyze(&cfg).ok();
        let out = &cfg.output.dir;
        let codec = pipeline::load_codec(out).map_err(|e| e.to_string())?;
        let gen = pipeline::load_generator(out).map_err(|e| e.to_string())?;
        let read = |f: &str| fs::read(out.join(f)).map_err(|e| format!("{f}: {e}"));
        fingerprints.push((
            read("codemap.csv")?,
            codec.params_hash,
            gen.params_hash,
            read("metrics.csv")?,
            read("metrics.json")?,
            read(PREDICTIONS_FILE)?,
        ));
    }
    let (a, b) = (&fingerprints[0], &fingerprints[1]);
    ensure(a.0 == b.0, || "CodeMap CSV differs".into())?;
    ensure(a.1 == b.1, || "codec parameter hash differs".into())?;
    ensure(a.2 == b.2, || "generator parameter hash differs".into())?;
    ensure(a.3 == b.3 && a.4 == b.4, || "metric reports differ".into())?;
    ensure(a.5 == b.5, || "predictions differ".into())?;
    Ok(format!(
        "CodeMap CSV, checkpoint hashes (codec {}.., generator {}..) and metric reports byte-identical",
        &a.1[..12],
        &a.2[..12]
    ))
}

/// Amazon-review-format log: Zipf popularity mixed with per-item successor preferences.
fn amazon_like_log(users: usize, items: usize, seed: u64) -> Log {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (1..=items).map(|r| 1.0 / r as f64).collect();
    let total: f64 = weights.iter().sum();
    let popular = |rng: &mut ChaCha8Rng| {
        let mut x = rng.random::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            x -= w;
            if x <= 0.0 {
                return i;
            }
        }
        items - 1
    };
    let successors: Vec<[usize; 3]> = (0..items)
        .map(|_| {
            [
                rng.random_range(0..items),
                rng.random_range(0..items),
                rng.random_range(0..items),
            ]
        })
        .collect();
    let mut log = Vec::new();
    for u in 0..users {
        let len = rng.random_range(5..=14);
        let mut cur = popular(&mut rng);
        for t in 0..len {
            log.push((
                format!("A{u:06}"),
                format!("B{cur:05}"),
                1_300_000_000 + 86_400 * t as i64,
            ));
            cur = if rng.random::<f64>() < 0.6 {
                successors[cur][rng.random_range(0..3)]
            } else {
                popular(&mut rng)
            };
        }
    }
    log
}

/// 1st_HR@10 of ranking every user the 10 items most frequent in their own split's inputs.
fn popularity_hr(out: &Path) -> Result<f64, String> {
    let splits = read_splits(
        fs::read(out.join(SPLITS_FILE))
            .map_err(|e| e.to_string())?
            .as_slice(),
    )
    .map_err(|e| e.to_string())?;
    let mut counts: HashMap<ItemId, usize> = HashMap::new();
    for ex in splits.iter().filter(|e| e.segment == Segment::Test) {
        for &i in &ex.input {
            *counts.entry(i).or_default() += 1;
        }
    }
    let mut ranked: Vec<(ItemId, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let top: Vec<ItemId> = ranked.iter().take(10).map(|p| p.0).collect();
    let test: Vec<_> = splits
        .iter()
        .filter(|e| e.segment == Segment::Test)
        .collect();
    let preds: Vec<Vec<RankedStepList>> = test
        .iter()
        .map(|_| vec![RankedStepList::from_ranked(1, top.iter().copied(), 10)])
        .collect();
    let truths: Vec<_> = test.iter().map(|e| e.target.clone()).collect();
    step_hr(&preds, &truths, 1, 10).map_err(|e| e.to_string())
}

pub fn ordering_smoke() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (data, source) = match std::env::var_os("AMAZON_REVIEWS_JSONL") {
        Some(p) => (std::path::PathBuf::from(p), "AMAZON_REVIEWS_JSONL"),
        None => {
            let p = tmp.path().join("reviews.jsonl");
            write_jsonl(&p, &amazon_like_log(6_000, 400, 8), true);
            (p, "synthetic Amazon-format log")
        }
    };
    let mut cfg = base_config(tmp.path(), &data, 1);
    cfg.data.max_users = Some(5_000);
    cfg.data.max_history_items = 10;
    cfg.codec.level_sizes = vec![16, 16];
    cfg.model.enc_layers = 2;
    cfg.model.dec_layers = 2;
    cfg.model.hidden = 32;
    cfg.model.ff_dim = 64;
    cfg.model.heads = 4;
    cfg.train.lr = 3e-3;
    cfg.train.batch_size = 64;
    cfg.train.epochs = 20;
    cfg.train.warmup_epochs = 5;
    cfg.train.eval_interval = 3;
    cfg.train.patience = 2;
    cfg.train.max_valid_users = Some(500);
    cfg.eval.beam_size = 20;
    cfg.eval.cutoffs = vec![10];
    let report = run_all(&cfg, |_| {})?;
    let gcb = report.get("1st_HR@10").unwrap_or(f64::NAN);
    let pop = popularity_hr(&cfg.output.dir)?;
    let detail = format!(
        "{source}, {} test users: 1st_HR@10 {gcb:.4} vs popularity {pop:.4}",
        report.users
    );
    ensure(gcb > pop, || format!("{detail} (direction does not match)"))?;
    Ok(detail)
}
