#![no_main]

use engage_core::features::{assemble_dataset, Family, FeatureTable};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(table) = FeatureTable::parse_csv("features.csv", text) {
        let again = FeatureTable::parse_csv("again.csv", &table.to_csv()).expect("rendered table parses");
        assert_eq!(again.rows.len(), table.rows.len());
        let _ = assemble_dataset(&table, &Family::ALL);
    }
});
