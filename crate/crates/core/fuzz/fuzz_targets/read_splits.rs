#![no_main]

use gcb_core::ingest::{read_splits, write_splits};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(splits) = read_splits(data) {
        let mut out = Vec::new();
        write_splits(&mut out, &splits).unwrap();
        assert_eq!(read_splits(out.as_slice()).unwrap(), splits);
    }
});
