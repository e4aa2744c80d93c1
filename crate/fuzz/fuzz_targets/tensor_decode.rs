#![no_main]

use libfuzzer_sys::fuzz_target;
use sosd_core::tensor_io::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode(data) {
        let again = decode(&encode(&t)).expect("re-encoded tensor decodes");
        assert!(again.bit_eq(&t));
    }
});
