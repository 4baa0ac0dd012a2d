//! Interaction-log parsing, user filtering and leave-k-out splitting.
//!
//! Accepted inputs:
//!
//! * JSONL, one object per line with `user`, `item`, `ts` and optional `category`. The Amazon
//!   review aliases `reviewerID`, `asin` and `unixReviewTime` are accepted too.
//! * TSV, `user \t item \t ts [\t category]` with no header.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::data_model::{validate_history, FutureTarget, HistoryError, ItemId, UserHistory};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("user {0}: history too short for the requested horizon")]
    HistoryTooShort(String),
    #[error("user {user}: {source}")]
    InvalidHistory {
        user: String,
        #[source]
        source: HistoryError,
    },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl IngestError {
    fn malformed(line: usize, reason: impl Into<String>) -> Self {
        IngestError::MalformedRecord {
            line,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Tsv,
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            "tsv" => Ok(InputFormat::Tsv),
            other => Err(format!("unknown input format `{other}`")),
        }
    }
}

/// All users' histories over a dense item catalog.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InteractionLog {
    /// Keyed by raw user key; iteration order is the deterministic output order.
    pub histories: BTreeMap<String, UserHistory>,
    /// Raw key of item `i` at index `i - 1`.
    pub item_keys: Vec<String>,
    /// Category of item `i` at index `i - 1`, when known.
    pub categories: Vec<Option<String>>,
}

impl InteractionLog {
    pub fn catalog_size(&self) -> usize {
        self.item_keys.len()
    }

    pub fn num_users(&self) -> usize {
        self.histories.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.histories.values().map(UserHistory::len).sum()
    }

    pub fn item_key(&self, id: ItemId) -> &str {
        &self.item_keys[id.index()]
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        for h in self.histories.values() {
            validate_history(h, self.catalog_size()).map_err(|source| {
                IngestError::InvalidHistory {
                    user: h.user.clone(),
                    source,
                }
            })?;
        }
        Ok(())
    }

    /// Keeps the users accepted by `keep` and renumbers the surviving items densely, preserving
    /// their relative order.
    pub fn retain_users(&self, mut keep: impl FnMut(&UserHistory) -> bool) -> InteractionLog {
        let kept: BTreeMap<String, UserHistory> = self
            .histories
            .iter()
            .filter(|(_, h)| keep(h))
            .map(|(k, h)| (k.clone(), h.clone()))
            .collect();
        let mut used = vec![false; self.catalog_size()];
        for h in kept.values() {
            for i in &h.items {
                used[i.index()] = true;
            }
        }
        let mut remap = vec![None; self.catalog_size()];
        let mut item_keys = Vec::new();
        let mut categories = Vec::new();
        for (old, &u) in used.iter().enumerate() {
            if u {
                item_keys.push(self.item_keys[old].clone());
                categories.push(self.categories[old].clone());
                remap[old] = Some(ItemId::from_index(item_keys.len() - 1));
            }
        }
        let histories = kept
            .into_iter()
            .map(|(k, mut h)| {
                for i in &mut h.items {
                    *i = remap[i.index()].expect("retained item");
                }
                (k, h)
            })
            .collect();
        InteractionLog {
            histories,
            item_keys,
            categories,
        }
    }
}

struct RawRecord {
    user: String,
    item: String,
    ts: i64,
    category: Option<String>,
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| obj.get(*n))
}

fn json_key(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_json_record(line_no: usize, line: &str) -> Result<RawRecord, IngestError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| IngestError::malformed(line_no, e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(IngestError::malformed(line_no, "expected a JSON object"));
    };
    let user = field(&obj, &["user", "reviewerID"]).ok_or(IngestError::MissingField {
        line: line_no,
        field: "user",
    })?;
    let item = field(&obj, &["item", "asin"]).ok_or(IngestError::MissingField {
        line: line_no,
        field: "item",
    })?;
    let ts = field(&obj, &["ts", "unixReviewTime"]).ok_or(IngestError::MissingField {
        line: line_no,
        field: "ts",
    })?;
    let user =
        json_key(user).ok_or_else(|| IngestError::malformed(line_no, "`user` must be a string"))?;
    let item =
        json_key(item).ok_or_else(|| IngestError::malformed(line_no, "`item` must be a string"))?;
    let ts = ts
        .as_i64()
        .ok_or_else(|| IngestError::malformed(line_no, "`ts` must be an integer"))?;
    let category = match obj.get("category") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            return Err(IngestError::malformed(
                line_no,
                "`category` must be a string",
            ))
        }
    };
    Ok(RawRecord {
        user,
        item,
        ts,
        category,
    })
}

fn parse_tsv_record(line_no: usize, line: &str) -> Result<RawRecord, IngestError> {
    let mut parts = line.split('\t');
    let mut next = |field: &'static str| {
        parts
            .next()
            .filter(|s| !s.is_empty())
            .ok_or(IngestError::MissingField {
                line: line_no,
                field,
            })
    };
    let user = next("user")?.to_string();
    let item = next("item")?.to_string();
    let ts_raw = next("ts")?;
    let ts = ts_raw
        .trim()
        .parse::<i64>()
        .map_err(|_| IngestError::malformed(line_no, format!("bad timestamp `{ts_raw}`")))?;
    let category = parts
        .next()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    Ok(RawRecord {
        user,
        item,
        ts,
        category,
    })
}

/// Parses an interaction stream. Histories are sorted by timestamp with ties kept in file order;
/// item ids are assigned in first-seen order.
pub fn parse_interactions<R: BufRead>(
    reader: R,
    format: InputFormat,
) -> Result<InteractionLog, IngestError> {
    let mut item_index: HashMap<String, ItemId> = HashMap::new();
    let mut item_keys = Vec::new();
    let mut categories: Vec<Option<String>> = Vec::new();
    let mut per_user: BTreeMap<String, Vec<(i64, ItemId)>> = BTreeMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        let rec = match format {
            InputFormat::Jsonl => parse_json_record(line_no, trimmed)?,
            InputFormat::Tsv => parse_tsv_record(line_no, trimmed)?,
        };
        let id = *item_index.entry(rec.item.clone()).or_insert_with(|| {
            item_keys.push(rec.item.clone());
            categories.push(None);
            ItemId::from_index(item_keys.len() - 1)
        });
        if categories[id.index()].is_none() {
            categories[id.index()] = rec.category;
        }
        per_user.entry(rec.user).or_default().push((rec.ts, id));
    }

    let histories = per_user
        .into_iter()
        .map(|(user, mut events)| {
            events.sort_by_key(|&(ts, _)| ts);
            let (timestamps, items) = events.into_iter().unzip();
            let h = UserHistory {
                user: user.clone(),
                items,
                timestamps,
            };
            (user, h)
        })
        .collect();
    Ok(InteractionLog {
        histories,
        item_keys,
        categories,
    })
}

/// Minimum history length for horizon `k`: one training input item plus three target blocks.
pub fn min_history_len(k: usize) -> usize {
    3 * k + 1
}

/// Drops users with fewer than `3k + 1` interactions and re-densifies the catalog.
pub fn filter_users(log: &InteractionLog, k: usize) -> Result<InteractionLog, IngestError> {
    if k == 0 {
        return Err(IngestError::ZeroHorizon);
    }
    let min = min_history_len(k);
    Ok(log.retain_users(|h| h.len() >= min))
}

/// Keeps at most `max_users` users, chosen by a seeded shuffle.
pub fn subsample_users(log: &InteractionLog, max_users: usize, seed: u64) -> InteractionLog {
    if log.num_users() <= max_users {
        return log.clone();
    }
    let mut keys: Vec<&String> = log.histories.keys().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chosen: std::collections::HashSet<&String> = keys.into_iter().take(max_users).collect();
    log.retain_users(|h| chosen.contains(&h.user))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Train,
    Valid,
    Test,
}

/// One (input prefix, next k items) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitExample {
    pub user: String,
    pub segment: Segment,
    pub input: Vec<ItemId>,
    pub target: FutureTarget,
}

/// Nested leave-k-out split for a history of length `n`:
///
/// * train: `H[1..n-3k]` predicts `H[n-3k+1..n-2k]`
/// * valid: `H[1..n-2k]` predicts `H[n-2k+1..n-k]`
/// * test:  `H[1..n-k]`  predicts `H[n-k+1..n]`
///
/// With `augment`, every shorter prefix `H[1..t]`, `1 <= t < n-3k`, also yields a training example
/// predicting `H[t+1..t+k]`, listed before the main one.
pub fn split_leave_k(
    log: &InteractionLog,
    k: usize,
    augment: bool,
) -> Result<Vec<SplitExample>, IngestError> {
    if k == 0 {
        return Err(IngestError::ZeroHorizon);
    }
    let mut out = Vec::with_capacity(log.num_users() * 3);
    for h in log.histories.values() {
        let n = h.len();
        if n < min_history_len(k) {
            return Err(IngestError::HistoryTooShort(h.user.clone()));
        }
        let example = |segment, cut: usize| SplitExample {
            user: h.user.clone(),
            segment,
            input: h.items[..cut].to_vec(),
            target: FutureTarget {
                items: h.items[cut..cut + k].to_vec(),
            },
        };
        if augment {
            for t in 1..n - 3 * k {
                out.push(example(Segment::Train, t));
            }
        }
        out.push(example(Segment::Train, n - 3 * k));
        out.push(example(Segment::Valid, n - 2 * k));
        out.push(example(Segment::Test, n - k));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SplitRecord {
    user: String,
    segment: Segment,
    input: Vec<u32>,
    target: Vec<u32>,
}

pub fn write_splits<W: Write>(mut w: W, examples: &[SplitExample]) -> io::Result<()> {
    for ex in examples {
        let rec = SplitRecord {
            user: ex.user.clone(),
            segment: ex.segment,
            input: ex.input.iter().map(|i| i.0).collect(),
            target: ex.target.items.iter().map(|i| i.0).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads split JSONL. Item ids must be non-zero and inputs non-empty.
pub fn read_splits<R: BufRead>(reader: R) -> Result<Vec<SplitExample>, IngestError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SplitRecord = serde_json::from_str(&line)
            .map_err(|e| IngestError::malformed(line_no, e.to_string()))?;
        if rec.input.is_empty() || rec.target.is_empty() {
            return Err(IngestError::malformed(line_no, "empty input or target"));
        }
        if rec.input.iter().chain(&rec.target).any(|&i| i == 0) {
            return Err(IngestError::malformed(line_no, "item id 0 is reserved"));
        }
        out.push(SplitExample {
            user: rec.user,
            segment: rec.segment,
            input: rec.input.into_iter().map(ItemId).collect(),
            target: FutureTarget {
                items: rec.target.into_iter().map(ItemId).collect(),
            },
        });
    }
    Ok(out)
}

/// Writes `item_id,raw_key,category`.
pub fn write_item_table<W: Write>(w: W, log: &InteractionLog) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["item_id", "raw_key", "category"])?;
    for (idx, key) in log.item_keys.iter().enumerate() {
        let cat = log.categories[idx].as_deref().unwrap_or("");
        wr.write_record([(idx + 1).to_string().as_str(), key, cat])?;
    }
    wr.flush()?;
    Ok(())
}

/// Item keys and categories, indexed by `ItemId::index`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ItemTable {
    pub keys: Vec<String>,
    pub categories: Vec<Option<String>>,
}

pub fn read_item_table<R: io::Read>(r: R) -> Result<ItemTable, IngestError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut table = ItemTable::default();
    for (idx, rec) in rd.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| IngestError::malformed(line, e.to_string()))?;
        let id: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| IngestError::malformed(line, "bad item_id"))?;
        if id != table.keys.len() + 1 {
            return Err(IngestError::malformed(
                line,
                "item ids must be dense and ascending",
            ));
        }
        let key = rec.get(1).ok_or(IngestError::MissingField {
            line,
            field: "raw_key",
        })?;
        table.keys.push(key.to_string());
        table
            .categories
            .push(rec.get(2).filter(|s| !s.is_empty()).map(str::to_string));
    }
    Ok(table)
}
