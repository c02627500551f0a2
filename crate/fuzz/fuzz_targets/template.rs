#![no_main]
use std::collections::BTreeMap;

use curate::gateway::{PromptTemplate, TemplateId};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|body: &str| {
    let t = PromptTemplate::new(TemplateId::Generation, body);
    let names = t.placeholders();
    let bindings: BTreeMap<&str, &str> = names.iter().map(|n| (*n, "v")).collect();
    t.render(&bindings).expect("every placeholder is bound");
});
