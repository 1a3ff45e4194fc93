#![no_main]

use engage_core::ingest::e4::{parse_channel_file, render_channel_file};
use engage_core::types::{Channel, SensorTrace};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_channel_file("fuzz.csv", text, 3);
    // Anything that parses as a single column must survive a round trip.
    if let Ok(file) = parse_channel_file("fuzz.csv", text, 1) {
        let Ok(trace) = SensorTrace::new(Channel::Eda, file.start_time, file.sample_rate, file.columns[0].clone())
        else {
            return;
        };
        let again = parse_channel_file("again.csv", &render_channel_file(&[&trace]), 1).expect("rendered file parses");
        assert_eq!(again.columns[0].len(), trace.values.len());
    }
});
