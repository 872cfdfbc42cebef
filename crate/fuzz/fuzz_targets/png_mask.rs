#![no_main]

use libfuzzer_sys::fuzz_target;
use zone_core::io::{decode_mask, encode_mask};

fuzz_target!(|data: &[u8]| {
    if let Ok(mask) = decode_mask(data) {
        let again = decode_mask(&encode_mask(&mask).unwrap()).unwrap();
        assert_eq!(again, mask);
    }
});
