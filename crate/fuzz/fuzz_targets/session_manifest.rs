#![no_main]

use libfuzzer_sys::fuzz_target;
use zone_core::compositor::SessionManifest;

fuzz_target!(|data: &[u8]| {
    let _ = SessionManifest::parse(data);
});
