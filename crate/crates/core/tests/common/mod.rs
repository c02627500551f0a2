#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BIOLOGY: &[&str] = &[
    "enzyme", "protein", "membrane", "ribosome", "mitochondria", "chloroplast", "nucleus", "cytoplasm",
    "genome", "plasmid", "receptor", "ligand", "kinase", "phosphate", "transcription", "translation",
    "allele", "mutation", "phenotype", "organism", "tissue", "antibody", "antigen", "pathogen",
    "metabolism", "glucose", "lipid", "vesicle", "flagellum", "cilia",
];

pub const CHEMISTRY: &[&str] = &[
    "catalyst", "reagent", "solvent", "polymer", "monomer", "oxidation", "reduction", "electrolyte",
    "anode", "cathode", "isotope", "molecule", "benzene", "ethanol", "titration", "precipitate",
    "crystal", "lattice", "enthalpy", "entropy", "equilibrium", "buffer", "alkene", "alkyne",
    "ester", "amine", "halide", "spectroscopy", "chromatography", "stoichiometry",
];

pub const TASKS: [&str; 5] = [
    "table_extraction",
    "entity_extraction",
    "molecule_translation",
    "molecule_extraction",
    "multiple_choice_tf",
];

fn paragraph(words: &[&str], rng: &mut ChaCha8Rng, n: usize) -> String {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(if i % 4 == 3 { "the" } else { *words.choose(rng).unwrap() });
    }
    format!("{}.", out.join(" "))
}

fn document(words: &[&str], rng: &mut ChaCha8Rng) -> String {
    let paras: Vec<String> = (0..rng.gen_range(2..5)).map(|_| {
            let n = rng.gen_range(20..80);
            paragraph(words, rng, n)
        }).collect();
    format!("{}\n", paras.join("\n\n"))
}

/// A small project: 50 documents over two domains, keyword reference texts
/// and a 2 domain by 5 task plan of `per_task` records each.
pub fn toy_project(root: &Path, per_task: usize) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (domain, words, n) in [("biology", BIOLOGY, 25), ("chemistry", CHEMISTRY, 25)] {
        let docs = root.join("docs").join(domain);
        let refs = root.join("refs").join(domain);
        fs::create_dir_all(&docs).unwrap();
        fs::create_dir_all(&refs).unwrap();
        for i in 0..n {
            fs::write(docs.join(format!("{i:03}.txt")), document(words, &mut rng)).unwrap();
        }
        for i in 0..3 {
            // every word at least once so the table is never short of k
            let mut text = words.join(" ");
            text.push('\n');
            text.push_str(&document(words, &mut rng));
            fs::write(refs.join(format!("ref{i}.txt")), text).unwrap();
        }
    }
    let mut plan = String::new();
    for domain in ["biology", "chemistry"] {
        for task in TASKS {
            plan.push_str(&format!(
                "[[synth.plan]]\ndomain = \"{domain}\"\ntask_type = \"{task}\"\ncount = {per_task}\n\n"
            ));
        }
    }
    let config = format!(
        r#"run_dir = "run"
seed = 7
workers = 4

[backend]
kind = "mock"
mock_seed = 11

[[ingest.inputs]]
path = "docs/biology"
source = "textbook"
domain = "biology"

[[ingest.inputs]]
path = "docs/chemistry"
source = "journal"
domain = "chemistry"

[keywords]
k = 20
temperature = 3.0

[[keywords.domains]]
name = "biology"
reference_dir = "refs/biology"

[[keywords.domains]]
name = "chemistry"
reference_dir = "refs/chemistry"

[export.epochs]
textbook = 1
journal = 1
sft = 3

{plan}"#
    );
    let path = root.join("curate.toml");
    fs::write(&path, config).unwrap();
    path
}

/// Every regular file under `dir` (relative path, bytes), sorted, skipping
/// bookkeeping directories.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            let name = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
            if name.starts_with('.') {
                continue;
            }
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push((name, fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
