#![no_main]

use libfuzzer_sys::fuzz_target;
use planit_core::io::{parse_trajectory, to_pretty};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = parse_trajectory(text) {
        assert_eq!(parse_trajectory(&to_pretty(&t)).expect("re-parse"), t);
    }
});
