#![no_main]
use curate::gateway::parse_correction;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(c) = parse_correction(text) {
        assert!(!c.text.trim().is_empty());
    }
});
