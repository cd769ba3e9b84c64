#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(manifest) = pmd_core::evolution::Manifest::from_text(text) {
            let back = pmd_core::evolution::Manifest::from_text(&manifest.to_text()).expect("round trip");
            assert_eq!(back, manifest);
        }
    }
});
