//! Token vocabulary over Semantic-ID codes and conversion between item sequences and tokens.
//!
//! Token layout: `PAD = 0`, `EOS = 1`, `BOS = 2`, then one contiguous range per code position, so
//! `token(p, c) = 3 + sum_{m < p} V_m + c`. A code placed at the wrong position is therefore
//! detectable on the way back.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodeMap;
use crate::data_model::{FutureTarget, ItemId};

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const BOS: u32 = 2;
pub const NUM_SPECIAL: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenizeError {
    #[error("item {0} has no Semantic-ID")]
    UnknownItem(ItemId),
    #[error("code map has {map} positions but vocabulary has {vocab}")]
    LayoutMismatch { map: usize, vocab: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    position_sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl Vocabulary {
    pub fn new(position_sizes: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(position_sizes.len());
        let mut acc = NUM_SPECIAL;
        for &s in &position_sizes {
            offsets.push(acc);
            acc += s;
        }
        Self {
            position_sizes,
            offsets,
        }
    }

    pub fn for_code_map(map: &CodeMap) -> Self {
        Self::new(map.position_sizes().to_vec())
    }

    pub fn position_sizes(&self) -> &[usize] {
        &self.position_sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Semantic-ID length.
    pub fn code_len(&self) -> usize {
        self.position_sizes.len()
    }

    pub fn size(&self) -> usize {
        NUM_SPECIAL + self.position_sizes.iter().sum::<usize>()
    }

    pub fn token(&self, position: usize, code: u32) -> Option<u32> {
        let size = *self.position_sizes.get(position)?;
        ((code as usize) < size).then(|| (self.offsets[position] + code as usize) as u32)
    }

    /// `(position, code)` of a code token; `None` for special or out-of-range tokens.
    pub fn decode(&self, token: u32) -> Option<(usize, u32)> {
        let t = token as usize;
        if t < NUM_SPECIAL {
            return None;
        }
        let p = self.offsets.partition_point(|&o| o <= t).checked_sub(1)?;
        let code = t - self.offsets[p];
        (code < self.position_sizes[p]).then_some((p, code as u32))
    }

    fn check(&self, map: &CodeMap) -> Result<(), TokenizeError> {
        if map.code_len() != self.code_len() {
            return Err(TokenizeError::LayoutMismatch {
                map: map.code_len(),
                vocab: self.code_len(),
            });
        }
        Ok(())
    }

    fn item_tokens(
        &self,
        map: &CodeMap,
        item: ItemId,
        out: &mut Vec<u32>,
    ) -> Result<(), TokenizeError> {
        let id = map
            .semantic_id(item)
            .ok_or(TokenizeError::UnknownItem(item))?;
        for (p, &c) in id.iter().enumerate() {
            out.push(self.token(p, c).ok_or(TokenizeError::UnknownItem(item))?);
        }
        Ok(())
    }
}

/// Tokens with an attention mask; padding trails all content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub mask: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of non-padding tokens.
    pub fn content_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn content(&self) -> &[u32] {
        &self.tokens[..self.content_len()]
    }
}

/// Concatenates the items' Semantic-IDs oldest first. When more than `max_len` tokens would
/// result, whole oldest items are dropped. The result is right-padded to `max_len`.
pub fn tokenize_history(
    items: &[ItemId],
    map: &CodeMap,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenSequence, TokenizeError> {
    vocab.check(map)?;
    let lc = vocab.code_len();
    let keep = max_len.checked_div(lc).unwrap_or(0).min(items.len());
    let mut tokens = Vec::with_capacity(max_len);
    for &item in &items[items.len() - keep..] {
        vocab.item_tokens(map, item, &mut tokens)?;
    }
    let content = tokens.len();
    tokens.resize(max_len, PAD);
    let mut mask = vec![1u8; content];
    mask.resize(max_len, 0);
    Ok(TokenSequence { tokens, mask })
}

/// `k * L_c` code tokens followed by `EOS`.
pub fn tokenize_target(
    target: &FutureTarget,
    map: &CodeMap,
    vocab: &Vocabulary,
) -> Result<TokenSequence, TokenizeError> {
    vocab.check(map)?;
    let mut tokens = Vec::with_capacity(target.items.len() * vocab.code_len() + 1);
    for &item in &target.items {
        vocab.item_tokens(map, item, &mut tokens)?;
    }
    tokens.push(EOS);
    let mask = vec![1u8; tokens.len()];
    Ok(TokenSequence { tokens, mask })
}

/// Decoder input for teacher forcing: `BOS` followed by the target shifted right by one.
pub fn decoder_input(target: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(target.len());
    out.push(BOS);
    out.extend_from_slice(&target[..target.len().saturating_sub(1)]);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoded {
    Item(ItemId),
    Unmappable,
}

impl Decoded {
    pub fn item(self) -> Option<ItemId> {
        match self {
            Decoded::Item(i) => Some(i),
            Decoded::Unmappable => None,
        }
    }
}

/// Splits generated tokens into Semantic-ID blocks and maps each block back to an item.
///
/// Everything from the first `EOS` on is ignored, as is trailing padding. A block is
/// `Unmappable` if it holds a special or out-of-range token, a code at the wrong position, a
/// tuple with no item, or is shorter than `L_c`.
pub fn detokenize_blocks(tokens: &[u32], map: &CodeMap, vocab: &Vocabulary) -> Vec<Decoded> {
    let lc = vocab.code_len();
    if lc == 0 {
        return Vec::new();
    }
    let end = tokens
        .iter()
        .position(|&t| t == EOS)
        .unwrap_or(tokens.len());
    let mut body = &tokens[..end];
    while let Some((&PAD, rest)) = body.split_last() {
        body = rest;
    }
    body.chunks(lc)
        .map(|block| {
            if block.len() < lc {
                return Decoded::Unmappable;
            }
            let mut codes = Vec::with_capacity(lc);
            for (p, &t) in block.iter().enumerate() {
                match vocab.decode(t) {
                    Some((pos, code)) if pos == p => codes.push(code),
                    _ => return Decoded::Unmappable,
                }
            }
            map.item_for(&codes)
                .map_or(Decoded::Unmappable, Decoded::Item)
        })
        .collect()
}
