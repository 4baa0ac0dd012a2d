#![no_main]

use gcb_core::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_toml_with_env(text, std::iter::empty()) {
            let _ = cfg.validate();
        }
    }
});
