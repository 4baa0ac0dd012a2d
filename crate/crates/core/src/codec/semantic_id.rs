//! Item to Semantic-ID assignment with a trailing collision-resolution position.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use super::quantize::{quantize, Codebooks};
use super::rqvae::{EncoderDecoder, ItemFeatures};
use super::CodecError;
use crate::data_model::ItemId;

/// Fixed-length code tuple identifying one item.
pub type SemanticId = Vec<u32>;

/// Bijective item <-> Semantic-ID table.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMap {
    ids: Vec<SemanticId>,
    code_to_item: HashMap<SemanticId, ItemId>,
    /// Code range of each position.
    position_sizes: Vec<usize>,
}

impl CodeMap {
    /// Builds the map from per-item ids (item `i` at index `i - 1`). Fails on length mismatch,
    /// out-of-range codes or duplicates.
    pub fn new(ids: Vec<SemanticId>, position_sizes: Vec<usize>) -> Result<Self, CodecError> {
        let mut code_to_item = HashMap::with_capacity(ids.len());
        for (idx, id) in ids.iter().enumerate() {
            if id.len() != position_sizes.len() {
                return Err(CodecError::BadCodeMap(format!(
                    "item {} has {} codes, expected {}",
                    idx + 1,
                    id.len(),
                    position_sizes.len()
                )));
            }
            if let Some(p) = id
                .iter()
                .zip(&position_sizes)
                .position(|(&c, &s)| c as usize >= s)
            {
                return Err(CodecError::BadCodeMap(format!(
                    "item {} code {} out of range at position {}",
                    idx + 1,
                    id[p],
                    p + 1
                )));
            }
            if let Some(prev) = code_to_item.insert(id.clone(), ItemId::from_index(idx)) {
                return Err(CodecError::Collision {
                    first: prev,
                    second: ItemId::from_index(idx),
                });
            }
        }
        Ok(Self {
            ids,
            code_to_item,
            position_sizes,
        })
    }

    /// Appends the collision position to raw quantization codes: items sharing a tuple get
    /// 0, 1, 2, ... in ascending item order.
    pub fn with_collision_position(
        raw: Vec<Vec<u32>>,
        level_sizes: &[usize],
    ) -> Result<Self, CodecError> {
        let mut seen: HashMap<Vec<u32>, u32> = HashMap::with_capacity(raw.len());
        let mut max_dup = 0;
        let ids: Vec<SemanticId> = raw
            .into_iter()
            .map(|mut codes| {
                let slot = seen.entry(codes.clone()).or_insert(0);
                codes.push(*slot);
                max_dup = max_dup.max(*slot);
                *slot += 1;
                codes
            })
            .collect();
        let mut sizes = level_sizes.to_vec();
        sizes.push(max_dup as usize + 1);
        Self::new(ids, sizes)
    }

    pub fn num_items(&self) -> usize {
        self.ids.len()
    }

    /// Semantic-ID length.
    pub fn code_len(&self) -> usize {
        self.position_sizes.len()
    }

    pub fn position_sizes(&self) -> &[usize] {
        &self.position_sizes
    }

    pub fn semantic_id(&self, item: ItemId) -> Option<&SemanticId> {
        if item.0 == 0 {
            return None;
        }
        self.ids.get(item.index())
    }

    pub fn item_for(&self, code: &[u32]) -> Option<ItemId> {
        self.code_to_item.get(code).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ItemId, &SemanticId)> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (ItemId::from_index(i), id))
    }

    /// Items whose tuple needed a non-zero collision code.
    pub fn collisions(&self) -> usize {
        self.ids
            .iter()
            .filter(|id| id.last().is_some_and(|&c| c > 0))
            .count()
    }

    /// `item_id,code_1,...,code_Lc` with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["item_id".to_string()];
        header.extend((1..=self.code_len()).map(|p| format!("code_{p}")));
        wr.write_record(&header)?;
        for (item, id) in self.iter() {
            let mut row = vec![item.to_string()];
            row.extend(id.iter().map(u32::to_string));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`CodeMap::write_csv`]. Position ranges come from `position_sizes`
    /// when given, otherwise from the largest code seen at each position.
    pub fn read_csv<R: Read>(r: R, position_sizes: Option<Vec<usize>>) -> Result<Self, CodecError> {
        let mut rd = csv::Reader::from_reader(r);
        let width = rd
            .headers()
            .map_err(|e| CodecError::BadCodeMap(e.to_string()))?
            .len();
        if width < 2 {
            return Err(CodecError::BadCodeMap(
                "need item_id and at least one code".into(),
            ));
        }
        let mut ids = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| CodecError::BadCodeMap(e.to_string()))?;
            let item: usize = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| CodecError::BadCodeMap(format!("row {}: bad item_id", row + 1)))?;
            if item != ids.len() + 1 {
                return Err(CodecError::BadCodeMap(format!(
                    "row {}: item ids must be dense and ascending",
                    row + 1
                )));
            }
            let codes = rec
                .iter()
                .skip(1)
                .map(|s| s.trim().parse::<u32>())
                .collect::<Result<Vec<u32>, _>>()
                .map_err(|e| CodecError::BadCodeMap(format!("row {}: {e}", row + 1)))?;
            ids.push(codes);
        }
        let sizes = match position_sizes {
            Some(s) => s,
            None => {
                let mut s = vec![1usize; width - 1];
                for id in &ids {
                    for (m, &c) in s.iter_mut().zip(id) {
                        *m = (*m).max(c as usize + 1);
                    }
                }
                s
            }
        };
        Self::new(ids, sizes)
    }
}

/// Quantization codes of every item, without the collision position.
pub fn raw_codes(
    features: &ItemFeatures,
    model: &EncoderDecoder,
    books: &Codebooks,
) -> Vec<Vec<u32>> {
    let z = model.encode(&features.matrix);
    (0..z.rows())
        .map(|i| {
            quantize(z.row(i), books)
                .codes
                .into_iter()
                .map(|c| c as u32)
                .collect()
        })
        .collect()
}

/// Encodes and quantizes every item. With `collision_position` the ids get one extra position
/// disambiguating shared tuples; without it a shared tuple is an error.
pub fn assign_semantic_ids(
    features: &ItemFeatures,
    model: &EncoderDecoder,
    books: &Codebooks,
    collision_position: bool,
) -> Result<CodeMap, CodecError> {
    let raw = raw_codes(features, model, books);
    if collision_position {
        CodeMap::with_collision_position(raw, &books.level_sizes())
    } else {
        CodeMap::new(raw, books.level_sizes())
    }
}

/// Count of items per distinct code prefix of length `depth`.
pub fn prefix_histogram(map: &CodeMap, depth: usize) -> BTreeMap<Vec<u32>, usize> {
    let mut h = BTreeMap::new();
    for (_, id) in map.iter() {
        *h.entry(id[..depth.min(id.len())].to_vec()).or_insert(0) += 1;
    }
    h
}
