#![no_main]
use curate::synthesis::TaskRegistry;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(registry) = TaskRegistry::parse_toml(text) {
        TaskRegistry::parse_toml(&registry.to_toml()).expect("written registry reparses");
    }
});
