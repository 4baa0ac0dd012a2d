#![no_main]

use gcb_core::codec::CodeMap;
use gcb_core::tokenizer::{detokenize_blocks, Vocabulary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let ids = vec![vec![0, 0, 0], vec![0, 1, 0], vec![1, 0, 0], vec![1, 0, 1], vec![2, 1, 0]];
    let map = CodeMap::new(ids, vec![3, 2, 2]).unwrap();
    let vocab = Vocabulary::for_code_map(&map);
    let tokens: Vec<u32> = data.iter().map(|&b| u32::from(b % 16)).collect();
    let blocks = detokenize_blocks(&tokens, &map, &vocab);
    assert!(blocks.len() <= tokens.len().div_ceil(vocab.code_len()));
});
