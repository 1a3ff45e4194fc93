#![no_main]

use engage_core::report::{table6_csv, ReportBundle};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(bundle) = ReportBundle::from_json(text) {
            let _ = table6_csv(&bundle);
        }
    }
});
