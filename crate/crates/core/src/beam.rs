//! Beam-search decoding of future Semantic-ID chains and per-step ranked item lists.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::codec::CodeMap;
use crate::data_model::{ItemId, RankedStepList};
use crate::generator::{GenError, Generator};
use crate::tensor::Matrix;
use crate::tokenizer::{detokenize_blocks, Decoded, TokenSequence, Vocabulary, BOS, EOS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamCandidate {
    /// Generated tokens, without `BOS`.
    pub tokens: Vec<u32>,
    /// Sum of per-step log-probabilities.
    pub logprob: f64,
    /// `EOS` emitted or the length limit reached.
    pub finished: bool,
}

/// Best first; equal scores go to the lexicographically smaller sequence.
fn rank(a: &BeamCandidate, b: &BeamCandidate) -> Ordering {
    b.logprob
        .total_cmp(&a.logprob)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Allowed next tokens for outputs made of exactly `k` valid Semantic-IDs followed by `EOS`.
#[derive(Debug, Clone)]
pub struct PrefixTrie {
    code_len: usize,
    horizon: usize,
    next: HashMap<Vec<u32>, Vec<u32>>,
}

impl PrefixTrie {
    pub fn new(map: &CodeMap, vocab: &Vocabulary, horizon: usize) -> Self {
        let mut next: HashMap<Vec<u32>, Vec<u32>> = HashMap::new();
        for (_, id) in map.iter() {
            for p in 0..id.len() {
                let tok = vocab.token(p, id[p]).expect("code within vocabulary");
                next.entry(id[..p].to_vec()).or_default().push(tok);
            }
        }
        for v in next.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        Self {
            code_len: map.code_len(),
            horizon,
            next,
        }
    }

    /// Tokens that may follow `generated`; empty when nothing can.
    pub fn allowed(&self, generated: &[u32], vocab: &Vocabulary) -> Vec<u32> {
        let lc = self.code_len;
        if lc == 0 {
            return vec![EOS];
        }
        if generated.len() >= self.horizon * lc {
            return if generated.len() == self.horizon * lc {
                vec![EOS]
            } else {
                Vec::new()
            };
        }
        let start = generated.len() / lc * lc;
        let mut codes = Vec::with_capacity(lc);
        for (p, &t) in generated[start..].iter().enumerate() {
            match vocab.decode(t) {
                Some((pos, c)) if pos == p => codes.push(c),
                _ => return Vec::new(),
            }
        }
        self.next.get(&codes).cloned().unwrap_or_default()
    }
}

fn log_softmax_row(row: &[f64], allowed: Option<&[u32]>) -> Vec<(u32, f64)> {
    let pick: Vec<u32> = match allowed {
        Some(a) => a.to_vec(),
        None => (0..row.len() as u32).collect(),
    };
    if pick.is_empty() {
        return Vec::new();
    }
    let max = pick
        .iter()
        .map(|&t| row[t as usize])
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + pick
            .iter()
            .map(|&t| (row[t as usize] - max).exp())
            .sum::<f64>()
            .ln();
    pick.into_iter()
        .map(|t| (t, row[t as usize] - lse))
        .collect()
}

fn check_len(model: &Generator, max_len: usize) -> Result<(), GenError> {
    let limit = model.config().max_target_len;
    if max_len > limit {
        return Err(GenError::ShapeMismatch(format!(
            "output length {max_len} exceeds decoder positions {limit}"
        )));
    }
    Ok(())
}

fn next_logits(
    model: &Generator,
    ctx: &Matrix,
    mask: &[u8],
    tokens: &[u32],
) -> Result<Vec<f64>, GenError> {
    let mut prefix = Vec::with_capacity(tokens.len() + 1);
    prefix.push(BOS);
    prefix.extend_from_slice(tokens);
    let logits = model.decode_logits(ctx, mask, &prefix)?;
    Ok(logits.row(logits.rows() - 1).to_vec())
}

/// Length-synchronous beam search from `BOS`. Every live beam is expanded over the full
/// vocabulary (or the trie's allowed tokens, renormalized); finished beams stay in the pool and
/// compete on raw cumulative log-probability. Returns up to `beam_size` candidates, best first.
pub fn beam_search(
    model: &Generator,
    source: &TokenSequence,
    beam_size: usize,
    max_len: usize,
    trie: Option<(&PrefixTrie, &Vocabulary)>,
) -> Result<Vec<BeamCandidate>, GenError> {
    let beam_size = beam_size.max(1);
    check_len(model, max_len)?;
    let ctx = model.encode(std::slice::from_ref(source))?.remove(0);
    let mut beams = vec![BeamCandidate {
        tokens: Vec::new(),
        logprob: 0.0,
        finished: max_len == 0,
    }];
    while beams.iter().any(|b| !b.finished) {
        let mut pool = Vec::with_capacity(beams.len() * model.config().vocab_size);
        for beam in beams {
            if beam.finished {
                pool.push(beam);
                continue;
            }
            let row = next_logits(model, &ctx, &source.mask, &beam.tokens)?;
            let allowed = trie.map(|(t, v)| t.allowed(&beam.tokens, v));
            for (tok, lp) in log_softmax_row(&row, allowed.as_deref()) {
                let mut tokens = beam.tokens.clone();
                tokens.push(tok);
                let finished = tok == EOS || tokens.len() >= max_len;
                pool.push(BeamCandidate {
                    tokens,
                    logprob: beam.logprob + lp,
                    finished,
                });
            }
        }
        pool.sort_by(rank);
        pool.truncate(beam_size);
        beams = pool;
    }
    Ok(beams)
}

/// Argmax decoding; ties go to the lowest token id.
pub fn greedy_decode(
    model: &Generator,
    source: &TokenSequence,
    max_len: usize,
) -> Result<BeamCandidate, GenError> {
    check_len(model, max_len)?;
    let ctx = model.encode(std::slice::from_ref(source))?.remove(0);
    let mut out = BeamCandidate {
        tokens: Vec::new(),
        logprob: 0.0,
        finished: max_len == 0,
    };
    while !out.finished {
        let row = next_logits(model, &ctx, &source.mask, &out.tokens)?;
        let mut best = (0u32, f64::NEG_INFINITY);
        for (t, lp) in log_softmax_row(&row, None) {
            if lp > best.1 {
                best = (t, lp);
            }
        }
        out.tokens.push(best.0);
        out.logprob += best.1;
        out.finished = best.0 == EOS || out.tokens.len() >= max_len;
    }
    Ok(out)
}

/// Builds `k` ranked lists from beams ordered best first. A beam contributes to step `j` only if
/// its first `j` blocks all decode to items; repeated items keep their first rank.
pub fn beams_to_trajectories(
    beams: &[BeamCandidate],
    map: &CodeMap,
    vocab: &Vocabulary,
    k: usize,
    cutoff: usize,
) -> Vec<RankedStepList> {
    let decoded: Vec<Vec<Decoded>> = beams
        .iter()
        .map(|b| detokenize_blocks(&b.tokens, map, vocab))
        .collect();
    (0..k)
        .map(|j| {
            let items = decoded.iter().filter_map(|blocks| {
                let prefix = blocks.get(..=j)?;
                prefix
                    .iter()
                    .all(|d| d.item().is_some())
                    .then(|| prefix[j].item())?
            });
            RankedStepList::from_ranked(j + 1, items, cutoff)
        })
        .collect()
}

/// Items per step, for prediction dumps.
pub fn step_items(lists: &[RankedStepList]) -> Vec<Vec<ItemId>> {
    lists.iter().map(|l| l.candidates().to_vec()).collect()
}
