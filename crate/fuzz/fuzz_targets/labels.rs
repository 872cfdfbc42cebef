#![no_main]

use libfuzzer_sys::fuzz_target;
use zone_core::classifier::data::{format_labels, parse_labels};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(labels) = parse_labels(text) {
            assert_eq!(
                parse_labels(&format_labels(labels.iter().copied())).unwrap(),
                labels
            );
        }
    }
});
