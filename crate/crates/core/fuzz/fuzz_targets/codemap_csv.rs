#![no_main]

use gcb_core::codec::CodeMap;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = CodeMap::read_csv(data, None) {
        // Accepted maps are bijective and survive a round trip.
        for (item, id) in map.iter() {
            assert_eq!(map.item_for(id), Some(item));
        }
        let mut out = Vec::new();
        map.write_csv(&mut out).unwrap();
        let back = CodeMap::read_csv(out.as_slice(), Some(map.position_sizes().to_vec())).unwrap();
        assert_eq!(back, map);
    }
});
