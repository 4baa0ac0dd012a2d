#![no_main]

use gcb_core::ingest::{parse_interactions, InputFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(log) = parse_interactions(data, InputFormat::Jsonl) {
        log.validate().expect("parsed log is valid");
    }
});
