#![no_main]

use libfuzzer_sys::fuzz_target;
use zone_core::pipeline::{ConfigOverrides, PipelineConfig};

fuzz_target!(|data: &[u8]| {
    let _ = PipelineConfig::from_json(data);
    let env = [("ZONE_SEED", "1")];
    let _ = PipelineConfig::layered(Some(data), env, &ConfigOverrides::default());
});
