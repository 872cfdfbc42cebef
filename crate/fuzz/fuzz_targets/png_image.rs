#![no_main]

use libfuzzer_sys::fuzz_target;
use zone_core::io::{decode_image, encode_image};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_image(data) {
        let again = decode_image(&encode_image(&img).unwrap()).unwrap();
        assert_eq!(again, img);
    }
});
