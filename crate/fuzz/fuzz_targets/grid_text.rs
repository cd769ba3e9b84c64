#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(grid) = pmd_core::gridworld::GridSpec::from_text(text) {
            let back = pmd_core::gridworld::GridSpec::from_text(&grid.to_text()).expect("round trip");
            assert_eq!(back, grid);
            let _ = grid.compile();
        }
    }
});
