#![no_main]

use libfuzzer_sys::fuzz_target;
use planit_core::io::{label_record_line, parse_label_record, parse_labels};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(labels) = parse_labels(text) {
        for l in &labels {
            let line = label_record_line(l);
            assert_eq!(&parse_label_record(&line).expect("re-parse"), l);
        }
    }
    let _ = parse_label_record(text);
});
