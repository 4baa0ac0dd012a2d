#![no_main]

use gcb_core::ingest::read_item_table;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = read_item_table(data) {
        assert_eq!(table.keys.len(), table.categories.len());
    }
});
