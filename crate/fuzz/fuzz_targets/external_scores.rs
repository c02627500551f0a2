#![no_main]
use curate::quality::ExternalScores;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = ExternalScores::parse(text);
});
