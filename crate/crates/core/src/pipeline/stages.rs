use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{files, progress, Pipeline, Stage, StagePlan};
use crate::config::{BackendKind, IngestInput};
use crate::correction::correct_document;
use crate::dedup::{dedup, DedupReport};
use crate::error::{Error, Result};
use crate::jsonl::{count_lines, read_documents, read_instructions, read_text, read_with, write_atomic, write_json, write_jsonl};
use crate::keywords::{build_keyword_table, KeywordTable};
use crate::model::{document_id, DatasetManifest, DocumentRecord, Source, StageFlag};
use crate::quality::{apply_labels, label_outcome, percentile_filter, score_documents, score_histogram, ExternalScores, ScoreSource, ScoreSourceKind, UnscoredDoc};
use crate::rating::{apply_ratings, aspect_histogram, rate_instruction, threshold_filter, UnratedRecord};
use crate::synthesis::{plan_slots, synthesize_one, RunSummary, TaskRegistry};

/// One exported corpus document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CptLine {
    pub id: String,
    pub source: Source,
    pub domain: String,
    pub text: String,
    pub token_count: u64,
    pub quality_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexLine {
    id: String,
    path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScoreFile {
    scored: usize,
    unscored: Vec<UnscoredDoc>,
    histogram: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RatingFile {
    rated: usize,
    unrated: Vec<UnratedRecord>,
    aspect_histogram: BTreeMap<String, [usize; 6]>,
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Files with `extension` directly inside `dir`, sorted by name.
fn list_files(dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(dir.to_path_buf()),
        _ => Error::io(dir, e),
    })?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == extension) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

impl Pipeline {
    fn batch(&self) -> usize {
        (self.config.workers * 4).max(16)
    }

    fn uses_llm(&self, stage: Stage) -> bool {
        match stage {
            Stage::Correct | Stage::Synth | Stage::Rate => true,
            Stage::Score => self.config.score.source == ScoreSourceKind::LlmLabeler,
            _ => false,
        }
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.config.base_dir).unwrap_or(p).to_string_lossy().into_owned()
    }

    pub(super) fn plan(&self, stage: Stage) -> Result<StagePlan> {
        let c = &self.config;
        let tok = self.tokenizer.name();
        let mut inputs = Vec::new();
        let mut params = match stage {
            Stage::Ingest => {
                if c.ingest.inputs.is_empty() {
                    return Err(Error::Config("ingest.inputs is empty".into()));
                }
                for input in &c.ingest.inputs {
                    inputs.extend(list_files(&c.resolve(&input.path), &input.extension)?);
                }
                json!({"ingest": c.ingest, "tokenizer": tok})
            }
            Stage::Correct => {
                inputs.push(self.path(files::INGESTED));
                json!({"correct": c.correct, "tokenizer": tok})
            }
            Stage::Score => {
                inputs.push(self.path(files::CORRECTED));
                if let (ScoreSourceKind::ExternalFile, Some(f)) = (c.score.source, &c.score.external_file) {
                    inputs.push(c.resolve(f));
                }
                json!({"source": c.score.source})
            }
            Stage::Filter => {
                inputs.push(self.path(files::SCORED));
                json!({"drop_fraction": c.score.drop_fraction})
            }
            Stage::Keywords => {
                for d in &c.keywords.domains {
                    match (&d.reference_dir, &d.table) {
                        (Some(dir), _) => inputs.extend(list_files(&c.resolve(dir), "txt")?),
                        (_, Some(t)) => inputs.push(c.resolve(t)),
                        _ => unreachable!("validated"),
                    }
                }
                json!({"keywords": c.keywords})
            }
            Stage::Synth => {
                for d in &c.keywords.domains {
                    inputs.push(self.table_path(&d.name));
                }
                if let Some(r) = &c.synth.registry {
                    inputs.push(c.resolve(r));
                }
                json!({"synth": c.synth, "policy": c.synth_policy(), "seed": c.seed})
            }
            Stage::Dedup => {
                inputs.push(self.path(files::SYNTH));
                json!({"dedup": c.dedup})
            }
            Stage::Rate => {
                inputs.push(self.path(files::DEDUP));
                json!({"rate": c.rate})
            }
            Stage::Gate => {
                inputs.push(self.path(files::RATED));
                json!({"min_average": c.rate.min_average})
            }
            Stage::Export => {
                inputs.push(self.path(files::FILTERED));
                inputs.push(self.path(files::GATED));
                json!({"export": c.export, "tokenizer": tok})
            }
            Stage::Stats | Stage::All => unreachable!("not a checkpointed stage"),
        };
        if self.uses_llm(stage) {
            params["backend"] = serde_json::to_value(&c.backend).expect("backend section serializes");
            if let (BackendKind::Mock, Some(f)) = (c.backend.kind, &c.backend.fixtures) {
                inputs.push(c.resolve(f));
            }
        }
        // missing predecessors surface here, before any work
        for i in &inputs {
            if !i.exists() {
                return Err(Error::MissingInput(i.clone()));
            }
        }
        Ok(StagePlan { inputs, params })
    }

    pub(super) fn run_stage(&self, stage: Stage, key: &str) -> Result<(Vec<PathBuf>, String)> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Correct => self.correct(key),
            Stage::Score => self.score(key),
            Stage::Filter => self.filter(),
            Stage::Keywords => self.keywords(),
            Stage::Synth => self.synth(key),
            Stage::Dedup => self.dedup(),
            Stage::Rate => self.rate(key),
            Stage::Gate => self.gate(),
            Stage::Export => self.export(),
            Stage::Stats | Stage::All => unreachable!("not a checkpointed stage"),
        }
    }

    fn extract(&self, file: &Path, input: &IngestInput) -> Result<String> {
        let bytes = match &input.extract_command {
            None => fs::read(file).map_err(|e| Error::io(file, e))?,
            Some(argv) => {
                let arg = file.to_string_lossy();
                let argv: Vec<String> = argv.iter().map(|a| a.replace("{input}", &arg)).collect();
                let (prog, rest) = argv
                    .split_first()
                    .ok_or_else(|| Error::Config("ingest extract_command is empty".into()))?;
                let out = Command::new(prog).args(rest).output().map_err(|e| Error::io(prog, e))?;
                if !out.status.success() {
                    return Err(Error::Precondition(format!(
                        "extract command exited with {}: {}",
                        out.status,
                        String::from_utf8_lossy(&out.stderr).trim()
                    ))
                    .in_stage("ingest", file.display().to_string()));
                }
                out.stdout
            }
        };
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("{}: invalid UTF-8 replaced", file.display());
                String::from_utf8_lossy(e.as_bytes()).into_owned()
            }
        })
    }

    fn ingest(&self) -> Result<(Vec<PathBuf>, String)> {
        let c = &self.config;
        let mut jobs = Vec::new();
        for input in &c.ingest.inputs {
            for f in list_files(&c.resolve(&input.path), &input.extension)? {
                jobs.push((input, f));
            }
        }
        let texts: Vec<String> = jobs.par_iter().map(|(input, f)| self.extract(f, input)).collect::<Result<_>>()?;
        let mut counters: BTreeMap<Source, usize> = BTreeMap::new();
        let mut docs = Vec::new();
        let mut index = Vec::new();
        for ((input, f), text) in jobs.iter().zip(texts) {
            let n = counters.entry(input.source).or_default();
            *n += 1;
            let id = document_id(input.source, *n);
            index.push(IndexLine {
                id: id.clone(),
                path: self.relative(f),
            });
            docs.push(DocumentRecord::new(id, input.source, input.domain.as_str(), text, self.tokenizer.as_ref()));
        }
        let out = self.path(files::INGESTED);
        let idx = self.path(files::INGEST_INDEX);
        write_jsonl(&out, &docs)?;
        write_jsonl(&idx, &index)?;
        Ok((vec![out, idx], format!("{} documents", docs.len())))
    }

    fn correct(&self, key: &str) -> Result<(Vec<PathBuf>, String)> {
        let docs = read_documents(&self.path(files::INGESTED))?;
        let gw = self.gateway()?;
        let policy = self.config.correct.policy();
        let tok = self.tokenizer.as_ref();
        let out_docs = progress::run(&self.run_dir, Stage::Correct, key, &docs, self.batch(), |d| d.id.clone(), |d| {
            correct_document(d.clone(), gw, &policy, tok)
        })?;
        let fallbacks: usize = out_docs.iter().map(|d| d.correction_notes.iter().filter(|n| n.is_fallback()).count()).sum();
        let out = self.path(files::CORRECTED);
        write_jsonl(&out, &out_docs)?;
        Ok((vec![out], format!("{} documents, {fallbacks} chunk(s) kept raw", out_docs.len())))
    }

    fn score(&self, key: &str) -> Result<(Vec<PathBuf>, String)> {
        let c = &self.config;
        let mut docs = read_documents(&self.path(files::CORRECTED))?;
        let report = match (c.score.source, &c.score.external_file) {
            (ScoreSourceKind::ExternalFile, Some(f)) => {
                let path = c.resolve(f);
                let scores = ExternalScores::parse(&read_text(&path)?)
                    .map_err(|e| e.in_stage("score", path.display().to_string()))?;
                score_documents(&mut docs, ScoreSource::ExternalFile(&scores))?
            }
            (ScoreSourceKind::ExternalFile, None) => unreachable!("validated"),
            (ScoreSourceKind::LlmLabeler, _) => {
                let gw = self.gateway()?;
                let outcomes = progress::run(&self.run_dir, Stage::Score, key, &docs, self.batch(), |d| d.id.clone(), |d| {
                    label_outcome(d, gw)
                })?;
                apply_labels(&mut docs, outcomes)
            }
        };
        let histogram = score_histogram(docs.iter().filter_map(|d| d.quality_score));
        let out = self.path(files::SCORED);
        let rep = self.path(files::SCORE_REPORT);
        write_jsonl(&out, &docs)?;
        let summary = format!("{} scored, {} unscored", report.scored, report.unscored.len());
        write_json(
            &rep,
            &ScoreFile {
                scored: report.scored,
                unscored: report.unscored,
                histogram,
            },
        )?;
        Ok((vec![out, rep], summary))
    }

    fn filter(&self) -> Result<(Vec<PathBuf>, String)> {
        let docs = read_documents(&self.path(files::SCORED))?;
        let docs = percentile_filter(docs, self.config.score.drop_fraction).map_err(|e| e.in_stage("filter", files::SCORED))?;
        let kept = docs.iter().filter(|d| d.is_kept()).count();
        let out = self.path(files::FILTERED);
        write_jsonl(&out, &docs)?;
        Ok((vec![out], format!("kept {kept}, dropped {}", docs.len() - kept)))
    }

    fn table_path(&self, domain: &str) -> PathBuf {
        self.run_dir.join(files::KEYWORDS_DIR).join(format!("{}.tsv", slug(domain)))
    }

    fn keywords(&self) -> Result<(Vec<PathBuf>, String)> {
        let c = &self.config;
        let stopwords = c.keywords.stopwords();
        let mut outputs = Vec::new();
        let mut sizes = Vec::new();
        for d in &c.keywords.domains {
            let table = match (&d.reference_dir, &d.table) {
                (Some(dir), _) => {
                    let texts: Vec<String> = list_files(&c.resolve(dir), "txt")?
                        .iter()
                        .map(|f| read_text(f))
                        .collect::<Result<_>>()?;
                    build_keyword_table(&d.name, &texts, &stopwords).map_err(|e| e.in_stage("keywords", d.name.clone()))?
                }
                (_, Some(t)) => {
                    let path = c.resolve(t);
                    let table = KeywordTable::parse_file(&read_text(&path)?)
                        .map_err(|e| e.in_stage("keywords", path.display().to_string()))?;
                    if table.domain != d.name {
                        return Err(Error::Config(format!(
                            "{} declares domain `{}`, configured as `{}`",
                            path.display(),
                            table.domain,
                            d.name
                        )));
                    }
                    table
                }
                _ => unreachable!("validated"),
            };
            let path = self.table_path(&d.name);
            write_atomic(&path, table.to_file_string().as_bytes())?;
            sizes.push(format!("{} ({} words)", d.name, table.len()));
            outputs.push(path);
        }
        let summary = if sizes.is_empty() { "no domains configured".into() } else { sizes.join(", ") };
        Ok((outputs, summary))
    }

    fn synth(&self, key: &str) -> Result<(Vec<PathBuf>, String)> {
        let c = &self.config;
        let mut tables = BTreeMap::new();
        for d in &c.keywords.domains {
            let path = self.table_path(&d.name);
            let table = KeywordTable::parse_file(&read_text(&path)?)?;
            tables.insert(d.name.clone(), table);
        }
        let registry = match &c.synth.registry {
            Some(p) => TaskRegistry::parse_toml(&read_text(&c.resolve(p))?)?,
            None => TaskRegistry::builtin(),
        };
        let policy = c.synth_policy();
        let slots = plan_slots(&c.synth.plan, &registry, &tables, &policy, c.seed)?;
        let gw = if slots.is_empty() { None } else { Some(self.gateway()?) };
        let outcomes = progress::run(&self.run_dir, Stage::Synth, key, &slots, self.batch(), |s| s.record_id(), |s| {
            let task = registry.get(s.task_type).expect("plan was validated");
            synthesize_one(s, task, &tables[&s.domain], gw.expect("slots need a gateway"), &policy)
                .map_err(|e| e.in_stage("synth", format!("record {}", s.record_id())))
        })?;
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (slot, o) in slots.iter().zip(outcomes) {
            match o {
                Ok(cand) => records.push(slot.into_record(cand)),
                Err(f) => failures.push(f),
            }
        }
        let summary = RunSummary::from_outcomes(&slots, &records, failures);
        if !summary.reconciles() {
            return Err(Error::Accounting("synth summary does not reconcile with the plan".into()));
        }
        let out = self.path(files::SYNTH);
        let sum = self.path(files::SYNTH_SUMMARY);
        write_jsonl(&out, &records)?;
        write_json(&sum, &summary)?;
        Ok((vec![out, sum], format!("{} records, {} failed", records.len(), summary.failures.len())))
    }

    fn dedup(&self) -> Result<(Vec<PathBuf>, String)> {
        let records = read_instructions(&self.path(files::SYNTH))?;
        let n = records.len();
        let outcome = dedup(records, &self.config.dedup.policy())?;
        let out = self.path(files::DEDUP);
        let clusters = self.path(files::CLUSTERS);
        let report = self.path(files::DEDUP_REPORT);
        write_jsonl(&out, &outcome.kept)?;
        write_jsonl(&clusters, &outcome.clusters)?;
        write_json(&report, &outcome.report)?;
        Ok((
            vec![out, clusters, report],
            format!("{} of {n} removed in {} cluster(s)", outcome.report.removed(), outcome.clusters.len()),
        ))
    }

    fn rate(&self, key: &str) -> Result<(Vec<PathBuf>, String)> {
        let mut records = read_instructions(&self.path(files::DEDUP))?;
        let retries = self.config.rate.parse_retries;
        let gw = if records.is_empty() { None } else { Some(self.gateway()?) };
        let outcomes = progress::run(&self.run_dir, Stage::Rate, key, &records, self.batch(), |r| r.id.clone(), |r| {
            rate_instruction(r, gw.expect("records need a gateway"), retries)
                .map_err(|e| e.in_stage("rate", format!("record {}", r.id)))
        })?;
        let report = apply_ratings(&mut records, outcomes);
        let out = self.path(files::RATED);
        let rep = self.path(files::RATING_REPORT);
        write_jsonl(&out, &records)?;
        let summary = format!("{} rated, {} unrated", report.rated, report.unrated.len());
        write_json(
            &rep,
            &RatingFile {
                rated: report.rated,
                unrated: report.unrated,
                aspect_histogram: aspect_histogram(&records),
            },
        )?;
        Ok((vec![out, rep], summary))
    }

    fn gate(&self) -> Result<(Vec<PathBuf>, String)> {
        let records = read_instructions(&self.path(files::RATED))?;
        let (kept, dropped) =
            threshold_filter(records, self.config.rate.min_average).map_err(|e| e.in_stage("gate", files::RATED))?;
        let out = self.path(files::GATED);
        let drop = self.path(files::GATE_DROPPED);
        write_jsonl(&out, &kept)?;
        write_jsonl(&drop, &dropped)?;
        Ok((vec![out, drop], format!("kept {}, dropped {}", kept.len(), dropped.len())))
    }

    fn export(&self) -> Result<(Vec<PathBuf>, String)> {
        let tok = self.tokenizer.as_ref();
        let docs = read_documents(&self.path(files::FILTERED))?;
        let kept: Vec<&DocumentRecord> = docs.iter().filter(|d| d.is_kept()).collect();
        if kept.is_empty() {
            return Err(Error::Export("no kept documents; refusing to write an empty cpt.jsonl".into()));
        }
        let instructions = read_instructions(&self.path(files::GATED))?;
        if instructions.is_empty() {
            return Err(Error::Export("no instructions passed the gate; refusing to write an empty sft.jsonl".into()));
        }
        let mut cpt = Vec::with_capacity(kept.len());
        for d in &kept {
            if tok.count(d.text()) != d.token_count {
                return Err(Error::Accounting(format!(
                    "document {} stores {} tokens but its text counts {}",
                    d.id,
                    d.token_count,
                    tok.count(d.text())
                )));
            }
            let quality_score = d
                .quality_score
                .ok_or_else(|| Error::Precondition(format!("kept document {} has no quality score", d.id)))?;
            cpt.push(CptLine {
                id: d.id.clone(),
                source: d.source,
                domain: d.domain.clone(),
                text: d.text().to_string(),
                token_count: d.token_count,
                quality_score,
            });
        }
        let mut manifest = DatasetManifest::new(tok.name());
        manifest.add_stage("cpt", docs.iter().map(DocumentRecord::tally))?;
        let sft_source = &self.config.export.sft_source;
        manifest.add_stage("sft", instructions.iter().map(|r| r.tally(sft_source, tok)))?;
        manifest.epochs = self.config.export.epochs.clone();

        let (cpt_path, sft_path, man_path) = (self.path(files::CPT), self.path(files::SFT), self.path(files::MANIFEST));
        write_jsonl(&cpt_path, &cpt)?;
        write_jsonl(&sft_path, &instructions)?;
        write_atomic(&man_path, format!("{}\n", manifest.to_line()).as_bytes())?;
        Ok((
            vec![cpt_path, sft_path, man_path],
            format!("{} documents, {} instructions", cpt.len(), instructions.len()),
        ))
    }

    pub(super) fn stats(&self) -> Result<Stats> {
        let stats = Stats::collect(&self.run_dir)?;
        write_json(&self.path(files::STATS), &stats)?;
        Ok(stats)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CptStats {
    pub ingested: Option<usize>,
    pub corrected: Option<usize>,
    pub chunks_kept_raw: Option<usize>,
    pub scored: Option<usize>,
    pub unscored: Option<usize>,
    pub kept: Option<usize>,
    pub dropped: Option<usize>,
    pub drop_fraction: Option<f64>,
    pub score_histogram: Option<BTreeMap<String, usize>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SftStats {
    pub requested: Option<usize>,
    pub synthesized: Option<usize>,
    pub generation_failures: Option<usize>,
    pub dedup_kept: Option<usize>,
    pub dedup_removed: Option<usize>,
    pub rated: Option<usize>,
    pub unrated: Option<usize>,
    pub gate_kept: Option<usize>,
    pub gate_dropped: Option<usize>,
    pub aspect_histogram: Option<BTreeMap<String, [usize; 6]>>,
}

/// Per-stage counts rebuilt from the run directory's files. Stages that have
/// not run leave their fields empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    /// Non-blank line count of every JSONL file present.
    pub lines: BTreeMap<String, usize>,
    pub cpt: CptStats,
    pub sft: SftStats,
}

fn present(dir: &Path, name: &str) -> Option<PathBuf> {
    let p = dir.join(name);
    p.exists().then_some(p)
}

fn reconcile(what: &str, counted: usize, lines: usize) -> Result<()> {
    if counted != lines {
        return Err(Error::Accounting(format!("{what}: records count {counted}, file has {lines} lines")));
    }
    Ok(())
}

impl Stats {
    pub fn collect(dir: &Path) -> Result<Self> {
        let mut s = Stats::default();
        for name in [
            files::INGESTED,
            files::CORRECTED,
            files::SCORED,
            files::FILTERED,
            files::SYNTH,
            files::DEDUP,
            files::CLUSTERS,
            files::RATED,
            files::GATED,
            files::GATE_DROPPED,
            files::CPT,
            files::SFT,
        ] {
            if let Some(p) = present(dir, name) {
                s.lines.insert(name.to_string(), count_lines(&p)?);
            }
        }
        let line = |name: &str| s.lines.get(name).copied().unwrap_or(0);

        if let Some(p) = present(dir, files::INGESTED) {
            s.cpt.ingested = Some(read_documents(&p)?.len());
        }
        if let Some(p) = present(dir, files::CORRECTED) {
            let docs = read_documents(&p)?;
            s.cpt.corrected = Some(docs.iter().filter(|d| d.stage_flags.contains(&StageFlag::Corrected)).count());
            s.cpt.chunks_kept_raw =
                Some(docs.iter().map(|d| d.correction_notes.iter().filter(|n| n.is_fallback()).count()).sum());
        }
        if let Some(p) = present(dir, files::SCORED) {
            let docs = read_documents(&p)?;
            let scored = docs.iter().filter(|d| d.quality_score.is_some()).count();
            s.cpt.scored = Some(scored);
            s.cpt.unscored = Some(docs.len() - scored);
            s.cpt.score_histogram = Some(score_histogram(docs.iter().filter_map(|d| d.quality_score)));
            reconcile(files::SCORED, docs.len(), line(files::SCORED))?;
        }
        if let Some(p) = present(dir, files::FILTERED) {
            let docs = read_documents(&p)?;
            let kept = docs.iter().filter(|d| d.is_kept()).count();
            let dropped = docs.iter().filter(|d| d.stage_flags.contains(&StageFlag::Dropped)).count();
            reconcile(files::FILTERED, kept + dropped, line(files::FILTERED))?;
            s.cpt.kept = Some(kept);
            s.cpt.dropped = Some(dropped);
            s.cpt.drop_fraction = Some(if docs.is_empty() { 0.0 } else { dropped as f64 / docs.len() as f64 });
            if present(dir, files::CPT).is_some() {
                reconcile(files::CPT, kept, line(files::CPT))?;
            }
        }
        if let Some(p) = present(dir, files::SYNTH_SUMMARY) {
            let summary: RunSummary = serde_json::from_str(&read_text(&p)?)
                .map_err(|e| Error::schema(files::SYNTH_SUMMARY, e.to_string()))?;
            let produced: usize = summary.groups.values().map(|g| g.produced).sum();
            s.sft.requested = Some(summary.groups.values().map(|g| g.requested).sum());
            s.sft.generation_failures = Some(summary.failures.len());
            reconcile(files::SYNTH, produced, line(files::SYNTH))?;
            s.sft.synthesized = Some(produced);
        }
        if let Some(p) = present(dir, files::DEDUP_REPORT) {
            let report: DedupReport = serde_json::from_str(&read_text(&p)?)
                .map_err(|e| Error::schema(files::DEDUP_REPORT, e.to_string()))?;
            let before: usize = report.groups.iter().map(|g| g.records).sum();
            reconcile(files::DEDUP, before - report.removed(), line(files::DEDUP))?;
            s.sft.dedup_kept = Some(line(files::DEDUP));
            s.sft.dedup_removed = Some(report.removed());
        }
        if let Some(p) = present(dir, files::RATED) {
            let records = read_instructions(&p)?;
            let rated = records.iter().filter(|r| r.aspect_scores.is_some()).count();
            s.sft.rated = Some(rated);
            s.sft.unrated = Some(records.len() - rated);
            s.sft.aspect_histogram = Some(aspect_histogram(&records));
            if present(dir, files::GATED).is_some() {
                reconcile("gate", line(files::GATED) + line(files::GATE_DROPPED), records.len())?;
            }
        }
        if let Some(p) = present(dir, files::GATED) {
            let kept = read_with(&p, crate::model::parse_instruction)?.len();
            s.sft.gate_kept = Some(kept);
            s.sft.gate_dropped = Some(line(files::GATE_DROPPED));
            if present(dir, files::SFT).is_some() {
                reconcile(files::SFT, kept, line(files::SFT))?;
            }
        }
        Ok(s)
    }

    pub fn summary(&self) -> String {
        let show = |v: Option<usize>| v.map_or("-".to_string(), |n| n.to_string());
        format!(
            "cpt kept {} dropped {}; sft synthesized {} deduped {} gated {}",
            show(self.cpt.kept),
            show(self.cpt.dropped),
            show(self.sft.synthesized),
            show(self.sft.dedup_kept),
            show(self.sft.gate_kept)
        )
    }
}
