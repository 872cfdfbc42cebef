#![no_main]

use libfuzzer_sys::fuzz_target;
use zone_core::pipeline::EditManifest;

fuzz_target!(|data: &[u8]| {
    let _ = EditManifest::parse(data);
});
