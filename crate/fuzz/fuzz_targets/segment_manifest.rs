#![no_main]

use libfuzzer_sys::fuzz_target;
use zone_core::refine::SegmentManifest;

fuzz_target!(|data: &[u8]| {
    let _ = SegmentManifest::parse(data);
});
