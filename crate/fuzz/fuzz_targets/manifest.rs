#![no_main]
use curate::model::DatasetManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(m) = DatasetManifest::parse(text) {
        assert_eq!(DatasetManifest::parse(&m.to_line()).expect("manifest reparses"), m);
    }
});
