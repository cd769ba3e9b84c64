#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let mut config = pmd_core::config::ExperimentConfig::defaults(pmd_core::config::Mode::RunPmd);
        let _ = config.apply_text(text);
    }
});
