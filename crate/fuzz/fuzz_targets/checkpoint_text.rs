#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(ckpt) = pmd_core::evolution::Checkpoint::from_text(text) {
            let _ = pmd_core::evolution::Checkpoint::from_text(&ckpt.to_text());
        }
    }
});
