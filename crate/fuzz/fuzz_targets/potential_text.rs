#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(pot) = pmd_core::potential::Potential::from_text(text) {
            let back = pmd_core::potential::Potential::from_text(&pot.to_text()).expect("round trip");
            assert_eq!(back, pot);
        }
    }
});
