#![no_main]
use curate::gateway::parse_generation;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = parse_generation(text);
});
