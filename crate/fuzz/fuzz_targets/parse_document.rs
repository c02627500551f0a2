#![no_main]
use curate::model::{parse_document, to_canonical_line};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|line: &str| {
    if let Ok(doc) = parse_document(line) {
        // anything accepted must survive a canonical round trip
        let again = parse_document(&to_canonical_line(&doc)).expect("canonical line reparses");
        assert_eq!(again, doc);
    }
});
