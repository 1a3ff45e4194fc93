#![no_main]

use engage_core::ingest::tables::parse_env_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_env_csv("fuzz.csv", text);
    }
});
