#![no_main]

use libfuzzer_sys::fuzz_target;
use sosd_core::pnm::Pnm;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = Pnm::decode(data) {
        let again = Pnm::decode(&img.encode()).expect("re-encoded image decodes");
        assert_eq!(again, img);
    }
});
