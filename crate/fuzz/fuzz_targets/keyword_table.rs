#![no_main]
use curate::keywords::KeywordTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(table) = KeywordTable::parse_file(text) {
        table.validate().expect("parsed tables are valid");
        let again = KeywordTable::parse_file(&table.to_file_string()).expect("written table reparses");
        assert_eq!(again.len(), table.len());
    }
});
