#![no_main]

use libfuzzer_sys::fuzz_target;
use planit_core::io::{parse_environment, to_pretty};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(env) = parse_environment(text) {
        // Anything accepted must survive a write and re-read unchanged.
        let again = parse_environment(&to_pretty(&env)).expect("re-parse of written environment");
        assert_eq!(env, again);
    }
});
