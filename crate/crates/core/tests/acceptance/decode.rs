use gcb_core::beam::{beam_search, greedy_decode};
use gcb_core::codec::CodeMap;
use gcb_core::data_model::{FutureTarget, ItemId};
use gcb_core::generator::{Generator, ModelConfig};
use gcb_core::tokenizer::{
    detokenize_blocks, tokenize_history, tokenize_target, TokenSequence, Vocabulary, EOS, PAD,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

/// Distinct random tuples over random position sizes.
fn code_map_strategy() -> impl Strategy<Value = CodeMap> {
    (
        prop::collection::vec(1usize..5, 1..4),
        1usize..40,
        any::<u64>(),
    )
        .prop_map(|(sizes, items, seed)| {
            let capacity: usize = sizes.iter().product();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut seen = std::collections::HashSet::new();
            let mut ids = Vec::new();
            while ids.len() < items.min(capacity) {
                let id: Vec<u32> = sizes
                    .iter()
                    .map(|&s| rng.random_range(0..s as u32))
                    .collect();
                if seen.insert(id.clone()) {
                    ids.push(id);
                }
            }
            CodeMap::new(ids, sizes).expect("distinct ids")
        })
}

pub fn tokenizer_round_trip() -> Outcome {
    let strategy = code_map_strategy().prop_flat_map(|map| {
        let n = map.num_items() as u32;
        let lc = map.code_len();
        (
            Just(map),
            prop::collection::vec(1..=n, 0..15),
            prop::collection::vec(1..=n, 1..4),
            0usize..(16 * lc),
        )
    });
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, |(map, history, future, max_len)| {
            let vocab = Vocabulary::for_code_map(&map);
            let lc = vocab.code_len();
            let history: Vec<ItemId> = history.into_iter().map(ItemId).collect();
            let seq = tokenize_history(&history, &map, &vocab, max_len)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(seq.len(), max_len);
            prop_assert_eq!(seq.content_len() % lc, 0);
            let kept = (max_len / lc).min(history.len());
            let decoded: Vec<Option<ItemId>> = detokenize_blocks(seq.content(), &map, &vocab)
                .into_iter()
                .map(|d| d.item())
                .collect();
            let newest: Vec<Option<ItemId>> = history[history.len() - kept..]
                .iter()
                .copied()
                .map(Some)
                .collect();
            prop_assert_eq!(decoded, newest);
            prop_assert!(seq.tokens[seq.content_len()..].iter().all(|&t| t == PAD));

            let target = FutureTarget {
                items: future.into_iter().map(ItemId).collect(),
            };
            let t = tokenize_target(&target, &map, &vocab)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(t.tokens.last(), Some(&EOS));
            let back: Vec<Option<ItemId>> = detokenize_blocks(&t.tokens, &map, &vocab)
                .into_iter()
                .map(|d| d.item())
                .collect();
            let expect: Vec<Option<ItemId>> = target.items.iter().copied().map(Some).collect();
            prop_assert_eq!(back, expect);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(
        "1000 random cases: detokenize inverts tokenize, truncation keeps the newest whole blocks"
            .into(),
    )
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Highest-scoring complete sequence: it ends with EOS or reaches `max_len`. Ties go to the
/// lexicographically smaller sequence.
fn brute_force(model: &Generator, src: &TokenSequence, max_len: usize) -> (Vec<u32>, f64) {
    let ctx = model.encode(std::slice::from_ref(src)).unwrap().remove(0);
    let mut best: Option<(Vec<u32>, f64)> = None;
    let mut stack = vec![(Vec::new(), 0.0)];
    while let Some((tokens, lp)) = stack.pop() {
        if tokens.last() == Some(&EOS) || tokens.len() == max_len {
            let better = match &best {
                None => true,
                Some((bt, bl)) => lp > *bl || (lp == *bl && tokens < *bt),
            };
            if better {
                best = Some((tokens, lp));
            }
            continue;
        }
        let mut prefix = vec![gcb_core::tokenizer::BOS];
        prefix.extend_from_slice(&tokens);
        let logits = model.decode_logits(&ctx, &src.mask, &prefix).unwrap();
        let row = log_softmax(logits.row(logits.rows() - 1));
        for (t, l) in row.into_iter().enumerate() {
            let mut next = tokens.clone();
            next.push(t as u32);
            stack.push((next, lp + l));
        }
    }
    best.unwrap()
}

pub fn beam_vs_exhaustive() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for case in 0..50u64 {
        let vocab = rng.random_range(4..=6);
        let max_len = rng.random_range(1..=4);
        let model = Generator::new(ModelConfig {
            vocab_size: vocab,
            enc_layers: 1,
            dec_layers: 2,
            hidden: 8,
            ff_dim: 16,
            heads: 2,
            dropout: 0.0,
            max_source_len: 6,
            max_target_len: 4,
            seed: case,
        })
        .map_err(|e| e.to_string())?;
        let len = rng.random_range(1..=6);
        let tokens: Vec<u32> = (0..len)
            .map(|_| rng.random_range(3..vocab as u32))
            .collect();
        let src = TokenSequence {
            mask: vec![1; tokens.len()],
            tokens,
        };
        let exhaustive = vocab.pow(max_len as u32);
        let beams =
            beam_search(&model, &src, exhaustive, max_len, None).map_err(|e| e.to_string())?;
        let (oracle, oracle_lp) = brute_force(&model, &src, max_len);
        ensure(beams[0].tokens == oracle, || {
            format!(
                "case {case}: beam top-1 {:?} but argmax {oracle:?}",
                beams[0].tokens
            )
        })?;
        worst = worst.max((beams[0].logprob - oracle_lp).abs());
        let one = beam_search(&model, &src, 1, max_len, None).map_err(|e| e.to_string())?;
        let greedy = greedy_decode(&model, &src, max_len).map_err(|e| e.to_string())?;
        ensure(one[0].tokens == greedy.tokens, || {
            format!(
                "case {case}: B=1 gives {:?}, greedy {:?}",
                one[0].tokens, greedy.tokens
            )
        })?;
    }
    ensure(worst < 1e-9, || {
        format!("log-probability disagreement {worst:e}")
    })?;
    Ok(format!("50 instances match the brute-force argmax (max logprob gap {worst:.1e}); B=1 equals greedy"))
}
