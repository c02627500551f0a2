#![no_main]
use curate::gateway::{format_rating, parse_rating};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(scores) = parse_rating(text) {
        assert!(scores.aspects().iter().all(|&a| a <= 5));
        assert_eq!(scores.total, scores.aspects().iter().map(|&a| u32::from(a)).sum::<u32>());
        let _ = parse_rating(&format_rating(&scores)).expect("formatted rating reparses");
    }
});
