#![no_main]
use curate::model::{parse_instruction, to_canonical_line};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|line: &str| {
    if let Ok(rec) = parse_instruction(line) {
        let again = parse_instruction(&to_canonical_line(&rec)).expect("canonical line reparses");
        assert_eq!(again, rec);
    }
});
