#![no_main]

use libfuzzer_sys::fuzz_target;
use planit_core::io::{model_to_string, parse_model};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = parse_model(text) {
        let written = model_to_string(&model);
        let again = parse_model(&written).expect("re-parse of written model");
        assert_eq!(model_to_string(&again), written);
    }
});
