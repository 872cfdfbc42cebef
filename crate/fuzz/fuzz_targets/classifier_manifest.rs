#![no_main]

use libfuzzer_sys::fuzz_target;
use zone_core::classifier::ParamsManifest;

fuzz_target!(|data: &[u8]| {
    let _ = ParamsManifest::parse(data);
});
