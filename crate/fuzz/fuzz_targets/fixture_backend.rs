#![no_main]
use curate::gateway::FixtureBackend;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = FixtureBackend::parse(text);
});
