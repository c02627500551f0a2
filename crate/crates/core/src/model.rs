//! Record types shared by every stage, their JSONL encoding, and manifest
//! accounting.
//!
//! Records are written one per line as JSON objects whose keys are sorted
//! alphabetically at every nesting level, so a parse/serialize round trip is
//! byte-stable.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tokenize::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Textbook,
    Journal,
    General,
    Other,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Textbook => "textbook",
            Source::Journal => "journal",
            Source::General => "general",
            Source::Other => "other",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "textbook" => Ok(Source::Textbook),
            "journal" => Ok(Source::Journal),
            "general" => Ok(Source::General),
            "other" => Ok(Source::Other),
            _ => Err(Error::schema("source", format!("unknown source `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageFlag {
    Ingested,
    Corrected,
    Scored,
    Kept,
    Dropped,
}

/// Why a chunk's correction was not taken verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkNoteKind {
    /// Response lacked the requested preamble; the whole response was used.
    PreambleMissing,
    /// Corrected/raw length ratio fell outside the policy bounds; raw text kept.
    RatioRejected,
    /// Nothing left after stripping the preamble; raw text kept.
    EmptyCorrection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkNote {
    pub chunk: u32,
    pub kind: ChunkNoteKind,
}

impl ChunkNote {
    pub fn is_fallback(&self) -> bool {
        !matches!(self.kind, ChunkNoteKind::PreambleMissing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentRecord {
    pub id: String,
    pub source: Source,
    pub domain: String,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_text: Option<String>,
    pub token_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_score: Option<f64>,
    #[serde(default)]
    pub stage_flags: BTreeSet<StageFlag>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub correction_notes: Vec<ChunkNote>,
}

impl DocumentRecord {
    pub fn new(
        id: impl Into<String>,
        source: Source,
        domain: impl Into<String>,
        raw_text: impl Into<String>,
        tokenizer: &dyn Tokenizer,
    ) -> Self {
        let raw_text = raw_text.into();
        let token_count = tokenizer.count(&raw_text);
        DocumentRecord {
            id: id.into(),
            source,
            domain: domain.into(),
            raw_text,
            corrected_text: None,
            token_count,
            quality_score: None,
            stage_flags: BTreeSet::from([StageFlag::Ingested]),
            correction_notes: Vec::new(),
        }
    }

    /// Corrected text when present, raw text otherwise.
    pub fn text(&self) -> &str {
        self.corrected_text.as_deref().unwrap_or(&self.raw_text)
    }

    pub fn recount(&mut self, tokenizer: &dyn Tokenizer) {
        self.token_count = tokenizer.count(self.text());
    }

    pub fn is_kept(&self) -> bool {
        self.stage_flags.contains(&StageFlag::Kept)
    }

    /// Sets exactly one of kept/dropped.
    pub fn mark(&mut self, kept: bool) {
        self.stage_flags.remove(&StageFlag::Kept);
        self.stage_flags.remove(&StageFlag::Dropped);
        self.stage_flags
            .insert(if kept { StageFlag::Kept } else { StageFlag::Dropped });
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::schema("id", "must be non-empty"));
        }
        if self.stage_flags.contains(&StageFlag::Kept)
            && self.stage_flags.contains(&StageFlag::Dropped)
        {
            return Err(Error::schema("stage_flags", "both kept and dropped are set"));
        }
        if let Some(s) = self.quality_score {
            if !(0.0..=5.0).contains(&s) {
                return Err(Error::schema("quality_score", format!("{s} is outside [0, 5]")));
            }
        }
        Ok(())
    }

    pub fn tally(&self) -> TallyItem {
        TallyItem {
            source: self.source.as_str().to_string(),
            domain: self.domain.clone(),
            token_count: Some(self.token_count),
            kept: self.is_kept(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    TableExtraction,
    EntityExtraction,
    MoleculeTranslation,
    MoleculeExtraction,
    MultipleChoiceTf,
}

impl TaskType {
    pub const ALL: [TaskType; 5] = [
        TaskType::TableExtraction,
        TaskType::EntityExtraction,
        TaskType::MoleculeTranslation,
        TaskType::MoleculeExtraction,
        TaskType::MultipleChoiceTf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::TableExtraction => "table_extraction",
            TaskType::EntityExtraction => "entity_extraction",
            TaskType::MoleculeTranslation => "molecule_translation",
            TaskType::MoleculeExtraction => "molecule_extraction",
            TaskType::MultipleChoiceTf => "multiple_choice_tf",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Plan(format!("unregistered task type `{s}`")))
    }
}

/// Five-aspect rating of one instruction. Aspects are in `[0, 5]` and
/// `total` always equals their sum once constructed through
/// [`AspectScores::new`] or parsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AspectScores {
    pub clarity: u8,
    pub complexity: u8,
    pub correctness: u8,
    pub usefulness: u8,
    pub adaptability: u8,
    pub total: u32,
    pub explanation: String,
}

impl AspectScores {
    pub const MAX: u8 = 5;

    pub fn new(aspects: [u8; 5], explanation: impl Into<String>) -> Result<Self> {
        for (name, v) in Self::NAMES.iter().zip(aspects) {
            if v > Self::MAX {
                return Err(Error::range(format!("aspect {name}"), v));
            }
        }
        let [clarity, complexity, correctness, usefulness, adaptability] = aspects;
        Ok(AspectScores {
            clarity,
            complexity,
            correctness,
            usefulness,
            adaptability,
            total: aspects.iter().map(|&v| v as u32).sum(),
            explanation: explanation.into(),
        })
    }

    pub const NAMES: [&'static str; 5] = [
        "Clarity",
        "Complexity",
        "Correctness",
        "Usefulness",
        "Adaptability",
    ];

    pub fn aspects(&self) -> [u8; 5] {
        [
            self.clarity,
            self.complexity,
            self.correctness,
            self.usefulness,
            self.adaptability,
        ]
    }

    pub fn average(&self) -> f64 {
        self.total as f64 / 5.0
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in Self::NAMES.iter().zip(self.aspects()) {
            if v > Self::MAX {
                return Err(Error::schema(
                    format!("aspect_scores.{}", name.to_lowercase()),
                    format!("{v} is outside [0, 5]"),
                ));
            }
        }
        let sum: u32 = self.aspects().iter().map(|&v| v as u32).sum();
        if sum != self.total {
            return Err(Error::schema(
                "aspect_scores.total",
                format!("{} does not equal the aspect sum {sum}", self.total),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionRecord {
    pub id: String,
    pub domain: String,
    pub task_type: TaskType,
    pub context: String,
    pub question: String,
    pub answer: String,
    pub sampled_keywords: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspect_scores: Option<AspectScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<u64>,
}

impl InstructionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::schema("id", "must be non-empty"));
        }
        if self.question.trim().is_empty() {
            return Err(Error::schema("question", "must be non-empty"));
        }
        if self.answer.trim().is_empty() {
            return Err(Error::schema("answer", "must be non-empty"));
        }
        let mut seen = HashSet::new();
        for k in &self.sampled_keywords {
            if !seen.insert(k.as_str()) {
                return Err(Error::schema(
                    "sampled_keywords",
                    format!("duplicate keyword `{k}`"),
                ));
            }
        }
        if let Some(scores) = &self.aspect_scores {
            scores.validate()?;
        }
        Ok(())
    }

    /// Checks the configured keyword count on top of [`Self::validate`].
    pub fn validate_keywords(&self, k: usize) -> Result<()> {
        if self.sampled_keywords.len() != k {
            return Err(Error::schema(
                "sampled_keywords",
                format!("expected {k} keywords, found {}", self.sampled_keywords.len()),
            ));
        }
        Ok(())
    }

    /// Text the instruction contributes to a training set.
    pub fn token_count(&self, tokenizer: &dyn Tokenizer) -> u64 {
        tokenizer.count(&self.context) + tokenizer.count(&self.question) + tokenizer.count(&self.answer)
    }

    pub fn tally(&self, source: &str, tokenizer: &dyn Tokenizer) -> TallyItem {
        TallyItem {
            source: source.to_string(),
            domain: self.domain.clone(),
            token_count: Some(self.token_count(tokenizer)),
            kept: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Document,
    Instruction,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Document(DocumentRecord),
    Instruction(InstructionRecord),
}

impl Record {
    pub fn to_line(&self) -> String {
        match self {
            Record::Document(d) => to_canonical_line(d),
            Record::Instruction(i) => to_canonical_line(i),
        }
    }
}

const DOCUMENT_REQUIRED: &[&str] = &["id", "source", "domain", "raw_text", "token_count"];
const INSTRUCTION_REQUIRED: &[&str] = &[
    "id",
    "domain",
    "task_type",
    "context",
    "question",
    "answer",
    "sampled_keywords",
];

pub fn parse_record(line: &str, kind: RecordKind) -> Result<Record> {
    match kind {
        RecordKind::Document => parse_document(line).map(Record::Document),
        RecordKind::Instruction => parse_instruction(line).map(Record::Instruction),
    }
}

pub fn parse_document(line: &str) -> Result<DocumentRecord> {
    let doc: DocumentRecord = parse_object(line, DOCUMENT_REQUIRED)?;
    doc.validate()?;
    Ok(doc)
}

pub fn parse_instruction(line: &str) -> Result<InstructionRecord> {
    let rec: InstructionRecord = parse_object(line, INSTRUCTION_REQUIRED)?;
    rec.validate()?;
    Ok(rec)
}

/// Parses one JSON object, reporting syntax errors by byte offset and
/// schema errors by field path.
pub(crate) fn parse_object<T: DeserializeOwned>(text: &str, required: &[&str]) -> Result<T> {
    let value: Value = serde_json::from_str(text).map_err(|e| json_error(text, &e))?;
    let Value::Object(map) = &value else {
        return Err(Error::schema("<root>", "expected a JSON object"));
    };
    if let Some(missing) = required.iter().find(|f| !map.contains_key(**f)) {
        return Err(Error::schema(*missing, "missing required field"));
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.into_inner().to_string();
        let field = if path == "." { "<root>".to_string() } else { path };
        Error::schema(field, msg)
    })
}

fn json_error(text: &str, e: &serde_json::Error) -> Error {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(e.line().saturating_sub(1))
        .map(str::len)
        .sum();
    Error::Json {
        offset: (line_start + e.column().saturating_sub(1)).min(text.len()),
        message: e.to_string(),
    }
}

/// Serializes with keys sorted at every level, no trailing newline.
pub fn to_canonical_line<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("records serialize to JSON");
    canonicalize(v).to_string()
}

fn canonicalize(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let sorted: BTreeMap<String, Value> =
                map.into_iter().map(|(k, v)| (k, canonicalize(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        other => other,
    }
}

/// Source-prefixed, zero-padded counter.
pub fn document_id(source: Source, n: usize) -> String {
    format!("{}-{n:06}", source.as_str())
}

pub fn instruction_id(n: usize) -> String {
    format!("ins-{n:06}")
}

/// One record's contribution to a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct TallyItem {
    pub source: String,
    pub domain: String,
    pub token_count: Option<u64>,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    /// `cpt` or `sft`.
    pub stage: String,
    pub source: String,
    pub domain: String,
    /// Documents for CPT rows, instructions for SFT rows.
    pub count: u64,
    pub token_total: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub tokenizer: String,
    pub rows: Vec<ManifestRow>,
    /// Training epochs per source. Recorded only.
    #[serde(default)]
    pub epochs: BTreeMap<String, u32>,
}

impl DatasetManifest {
    pub fn new(tokenizer: impl Into<String>) -> Self {
        DatasetManifest {
            tokenizer: tokenizer.into(),
            ..Default::default()
        }
    }

    /// Appends one row per (source, domain) seen in `items`, counting only
    /// kept items. Rows come out sorted by (source, domain).
    pub fn add_stage<I>(&mut self, stage: &str, items: I) -> Result<()>
    where
        I: IntoIterator<Item = TallyItem>,
    {
        self.rows.extend(build_rows(stage, items)?);
        Ok(())
    }

    pub fn row(&self, stage: &str, source: &str) -> impl Iterator<Item = &ManifestRow> {
        let (stage, source) = (stage.to_string(), source.to_string());
        self.rows
            .iter()
            .filter(move |r| r.stage == stage && r.source == source)
    }

    pub fn to_line(&self) -> String {
        to_canonical_line(self)
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_object(text.trim(), &["tokenizer", "rows"])
    }
}

pub fn build_manifest<I>(stage: &str, tokenizer: &str, items: I) -> Result<DatasetManifest>
where
    I: IntoIterator<Item = TallyItem>,
{
    let mut m = DatasetManifest::new(tokenizer);
    m.add_stage(stage, items)?;
    Ok(m)
}

fn build_rows<I>(stage: &str, items: I) -> Result<Vec<ManifestRow>>
where
    I: IntoIterator<Item = TallyItem>,
{
    let mut groups: BTreeMap<(String, String), (u64, u64)> = BTreeMap::new();
    for item in items {
        let tokens = item.token_count.ok_or_else(|| {
            Error::Accounting(format!(
                "record from source `{}` has no token count",
                item.source
            ))
        })?;
        let entry = groups.entry((item.source, item.domain)).or_default();
        if item.kept {
            entry.0 += 1;
            entry.1 += tokens;
        }
    }
    Ok(groups
        .into_iter()
        .map(|((source, domain), (count, token_total))| ManifestRow {
            stage: stage.to_string(),
            source,
            domain,
            count,
            token_total,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::ApproxTokenizer;

    fn doc(id: &str, tokens: u64, kept: bool) -> DocumentRecord {
        let mut d = DocumentRecord::new(id, Source::Textbook, "materials", "x", &ApproxTokenizer);
        d.token_count = tokens;
        d.mark(kept);
        d
    }

    #[test]
    fn minimal_document_line() {
        let line = r#"{"id":"d1","source":"textbook","domain":"materials","raw_text":"x","token_count":1}"#;
        let d = parse_document(line).unwrap();
        assert_eq!(d.raw_text, "x");
        assert_eq!(d.token_count, 1);
        assert!(d.stage_flags.is_empty());
    }

    #[test]
    fn instruction_missing_question_names_field() {
        let line = r#"{"id":"i1","domain":"m","task_type":"table_extraction","context":"c","answer":"a","sampled_keywords":[]}"#;
        match parse_instruction(line) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "question"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_offset() {
        match parse_document(r#"{"id": "d1", "source" "x"}"#) {
            Err(Error::Json { offset, .. }) => assert_eq!(offset, 22),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn type_errors_carry_path() {
        let line = r#"{"id":"d1","source":"textbook","domain":"m","raw_text":"x","token_count":"many"}"#;
        match parse_document(line) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "token_count"),
            other => panic!("unexpected {other:?}"),
        }
        let line = r#"{"id":"d1","source":"textbook","domain":"m","raw_text":"x","token_count":1,"extra":2}"#;
        match parse_document(line) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "extra"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kept_and_dropped_are_exclusive() {
        let line = r#"{"id":"d1","source":"journal","domain":"m","raw_text":"x","token_count":1,"stage_flags":["kept","dropped"]}"#;
        assert!(matches!(parse_document(line), Err(Error::Schema { .. })));
    }

    #[test]
    fn empty_answer_rejected() {
        let line = r#"{"id":"i1","domain":"m","task_type":"table_extraction","context":"c","question":"q","answer":"  ","sampled_keywords":["a"]}"#;
        assert!(matches!(parse_instruction(line), Err(Error::Schema { field, .. }) if field == "answer"));
    }

    #[test]
    fn canonical_keys_are_sorted() {
        let d = doc("d1", 3, true);
        let line = to_canonical_line(&d);
        assert!(line.starts_with(r#"{"domain":"materials","id":"d1","raw_text":"x","source":"textbook","stage_flags":["ingested","kept"],"token_count":3}"#));
    }

    #[test]
    fn manifest_sums_kept() {
        let items = [doc("a", 10, true), doc("b", 20, true), doc("c", 30, true)];
        let m = build_manifest("cpt", "t", items.iter().map(DocumentRecord::tally)).unwrap();
        assert_eq!(m.rows.len(), 1);
        assert_eq!(m.rows[0].token_total, 60);
        assert_eq!(m.rows[0].count, 3);

        let items = [doc("a", 5, true), doc("b", 5, true), doc("c", 100, false)];
        let m = build_manifest("cpt", "t", items.iter().map(DocumentRecord::tally)).unwrap();
        assert_eq!(m.rows[0].token_total, 10);
        assert_eq!(m.rows[0].count, 2);
    }

    #[test]
    fn manifest_rejects_missing_tokens() {
        let item = TallyItem {
            source: "s".into(),
            domain: "d".into(),
            token_count: None,
            kept: true,
        };
        assert!(matches!(
            build_manifest("sft", "t", [item]),
            Err(Error::Accounting(_))
        ));
    }

    #[test]
    fn manifest_round_trips() {
        let mut m = build_manifest("cpt", "t", [doc("a", 7, true).tally()]).unwrap();
        m.epochs.insert("general".into(), 1);
        m.epochs.insert("science".into(), 5);
        assert_eq!(DatasetManifest::parse(&m.to_line()).unwrap(), m);
    }
}
