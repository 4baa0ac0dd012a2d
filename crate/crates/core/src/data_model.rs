//! Domain types shared by every stage of the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense item identifier in `1..=M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u32);

impl ItemId {
    #[inline]
    pub fn get(self) -> u32 {
        self.0
    }

    /// Zero-based row index for embedding and feature tables.
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    #[inline]
    pub fn from_index(idx: usize) -> Self {
        ItemId(idx as u32 + 1)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HistoryError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("timestamps decrease at position {0}")]
    NonMonotonicTimestamps(usize),
    #[error("item {item} outside catalog 1..={catalog_size}")]
    ItemOutOfRange { item: u32, catalog_size: usize },
}

/// One user's time-ordered interactions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserHistory {
    pub user: String,
    pub items: Vec<ItemId>,
    pub timestamps: Vec<i64>,
}

impl UserHistory {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Checks the history invariants against a catalog of `catalog_size` items.
pub fn validate_history(h: &UserHistory, catalog_size: usize) -> Result<(), HistoryError> {
    if h.items.is_empty() {
        return Err(HistoryError::EmptyHistory);
    }
    if let Some(pos) = h.timestamps.windows(2).position(|w| w[1] < w[0]) {
        return Err(HistoryError::NonMonotonicTimestamps(pos + 1));
    }
    if let Some(bad) = h
        .items
        .iter()
        .find(|i| i.0 == 0 || i.0 as usize > catalog_size)
    {
        return Err(HistoryError::ItemOutOfRange {
            item: bad.0,
            catalog_size,
        });
    }
    Ok(())
}

/// The `k` items following a history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FutureTarget {
    pub items: Vec<ItemId>,
}

impl FutureTarget {
    pub fn horizon(&self) -> usize {
        self.items.len()
    }
}

/// Ranked candidates for one future step. Candidates are distinct and at most `K` long.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RankedStepList {
    pub step: usize,
    candidates: Vec<ItemId>,
}

impl RankedStepList {
    /// Keeps the first occurrence of each item, in order, up to `cutoff` items.
    pub fn from_ranked(
        step: usize,
        ranked: impl IntoIterator<Item = ItemId>,
        cutoff: usize,
    ) -> Self {
        let mut candidates: Vec<ItemId> = Vec::with_capacity(cutoff);
        for item in ranked {
            if candidates.len() == cutoff {
                break;
            }
            if !candidates.contains(&item) {
                candidates.push(item);
            }
        }
        Self { step, candidates }
    }

    pub fn candidates(&self) -> &[ItemId] {
        &self.candidates
    }

    /// 1-based rank of `item`, if present.
    pub fn rank_of(&self, item: ItemId) -> Option<usize> {
        self.candidates
            .iter()
            .position(|&c| c == item)
            .map(|p| p + 1)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}
