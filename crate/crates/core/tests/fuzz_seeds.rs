//! Replays the checked-in fuzz corpus through the same entry points and
//! checks as the fuzz targets, so regressions surface under `cargo test`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use curate::config::Config;
use curate::gateway::{
    format_rating, parse_correction, parse_educational_score, parse_generation, parse_rating, FixtureBackend,
    PromptTemplate, TemplateId,
};
use curate::keywords::KeywordTable;
use curate::model::{parse_document, parse_instruction, to_canonical_line, DatasetManifest};
use curate::quality::ExternalScores;
use curate::synthesis::TaskRegistry;

fn check(target: &str, text: &str) {
    match target {
        "parse_document" => {
            if let Ok(d) = parse_document(text) {
                assert_eq!(parse_document(&to_canonical_line(&d)).unwrap(), d);
            }
        }
        "parse_instruction" => {
            if let Ok(r) = parse_instruction(text) {
                assert_eq!(parse_instruction(&to_canonical_line(&r)).unwrap(), r);
            }
        }
        "parse_correction" => {
            if let Ok(c) = parse_correction(text) {
                assert!(!c.text.trim().is_empty());
            }
        }
        "parse_educational_score" => {
            if let Ok(s) = parse_educational_score(text) {
                assert!(s <= 5);
            }
        }
        "parse_generation" => {
            let _ = parse_generation(text);
        }
        "parse_rating" => {
            if let Ok(s) = parse_rating(text) {
                assert_eq!(s.total, s.aspects().iter().map(|&a| u32::from(a)).sum::<u32>());
                parse_rating(&format_rating(&s)).unwrap();
            }
        }
        "keyword_table" => {
            if let Ok(t) = KeywordTable::parse_file(text) {
                t.validate().unwrap();
                assert_eq!(KeywordTable::parse_file(&t.to_file_string()).unwrap().len(), t.len());
            }
        }
        "external_scores" => {
            let _ = ExternalScores::parse(text);
        }
        "fixture_backend" => {
            let _ = FixtureBackend::parse(text);
        }
        "config" => {
            let _ = Config::parse(text, Path::new("."));
        }
        "task_registry" => {
            if let Ok(r) = TaskRegistry::parse_toml(text) {
                TaskRegistry::parse_toml(&r.to_toml()).unwrap();
            }
        }
        "manifest" => {
            if let Ok(m) = DatasetManifest::parse(text) {
                assert_eq!(DatasetManifest::parse(&m.to_line()).unwrap(), m);
            }
        }
        "template" => {
            let t = PromptTemplate::new(TemplateId::Generation, text);
            let names = t.placeholders();
            let bindings: BTreeMap<&str, &str> = names.iter().map(|n| (*n, "v")).collect();
            t.render(&bindings).unwrap();
        }
        other => panic!("corpus directory `{other}` has no matching target"),
    }
}

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus")
}

#[test]
fn every_seed_replays_cleanly() {
    let mut seen = 0;
    let mut dirs: Vec<_> = fs::read_dir(corpus()).unwrap().map(|e| e.unwrap().path()).collect();
    dirs.sort();
    for dir in &dirs {
        let target = dir.file_name().unwrap().to_str().unwrap();
        for seed in fs::read_dir(dir).unwrap() {
            let bytes = fs::read(seed.unwrap().path()).unwrap();
            if let Ok(text) = std::str::from_utf8(&bytes) {
                check(target, text);
                seen += 1;
            }
        }
    }
    assert_eq!(dirs.len(), 13, "one corpus directory per fuzz target");
    assert!(seen >= 26, "only {seen} seeds");
}

#[test]
fn well_formed_seeds_parse() {
    let read = |t: &str, f: &str| fs::read_to_string(corpus().join(t).join(f)).unwrap();
    parse_document(&read("parse_document", "minimal")).unwrap();
    parse_instruction(&read("parse_instruction", "ins0")).unwrap();
    assert_eq!(parse_rating(&read("parse_rating", "mismatched_total")).unwrap().total, 15);
    assert_eq!(parse_educational_score(&read("parse_educational_score", "bracketed")).unwrap(), 4);
    Config::parse(&read("config", "toy"), Path::new(".")).unwrap();
    KeywordTable::parse_file(&read("keyword_table", "built")).unwrap();
    DatasetManifest::parse(&read("manifest", "export")).unwrap();
}
