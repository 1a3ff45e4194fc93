#![no_main]

use engage_core::model::GbmModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // A model that validates must predict without panicking.
    if let Ok(model) = GbmModel::from_json(text) {
        let row = vec![0.0; model.feature_names.len()];
        let _ = model.predict_dense(&row);
    }
});
