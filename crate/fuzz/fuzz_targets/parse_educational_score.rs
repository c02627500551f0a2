#![no_main]
use curate::gateway::parse_educational_score;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(score) = parse_educational_score(text) {
        assert!(score <= 5);
    }
});
