#![no_main]

use libfuzzer_sys::fuzz_target;
use sosd_core::synth::DatasetManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = DatasetManifest::parse(text);
    }
});
