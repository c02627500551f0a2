//! Educational-value scoring of corpus documents and the percentile drop.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{parse_educational_score, render_prompt, CompletionRequest, Gateway, TemplateId};
use crate::model::{parse_object, DocumentRecord, StageFlag};

pub const DEFAULT_DROP_FRACTION: f64 = 0.25;
pub const MAX_SCORE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSourceKind {
    LlmLabeler,
    ExternalFile,
}

/// Scores come from the labeling prompt or from a precomputed file.
pub enum ScoreSource<'a> {
    LlmLabeler(&'a Gateway),
    ExternalFile(&'a ExternalScores),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreLine {
    id: String,
    score: f64,
}

/// Precomputed scores keyed by document id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalScores {
    scores: HashMap<String, f64>,
}

impl ExternalScores {
    /// JSONL of `{"id": ..., "score": ...}` with scores in [0, 5].
    pub fn parse(text: &str) -> Result<Self> {
        let mut scores = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let at = |e: Error| e.in_stage("score file", format!("line {}", n + 1));
            let row: ScoreLine = parse_object(line, &["id", "score"]).map_err(at)?;
            if !(0.0..=MAX_SCORE).contains(&row.score) {
                return Err(at(Error::range(format!("score of `{}`", row.id), row.score)));
            }
            if scores.insert(row.id.clone(), row.score).is_some() {
                return Err(at(Error::schema("id", format!("`{}` appears twice", row.id))));
            }
        }
        Ok(ExternalScores { scores })
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.scores.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnscoredDoc {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreReport {
    pub scored: usize,
    pub unscored: Vec<UnscoredDoc>,
}

/// Labels one document with the educational-value prompt.
pub fn label_document(doc: &DocumentRecord, gateway: &Gateway) -> Result<u8> {
    let prompt = render_prompt(TemplateId::CptLabel, &BTreeMap::from([("extract", doc.text())]))?;
    let response = gateway.complete(&CompletionRequest::new(prompt).with_max_output(512))?;
    parse_educational_score(&response.text)
}

/// Score, or the reason the response could not be used.
pub type LabelOutcome = std::result::Result<u8, String>;

/// Labels one document. Unusable responses come back as `Ok(Err(reason))`;
/// transport and template failures are errors.
pub fn label_outcome(doc: &DocumentRecord, gateway: &Gateway) -> Result<LabelOutcome> {
    match label_document(doc, gateway) {
        Ok(s) => Ok(Ok(s)),
        Err(e @ (Error::Transport { .. } | Error::Template { .. })) => {
            Err(e.in_stage("score", format!("document {}", doc.id)))
        }
        Err(e) => Ok(Err(e.to_string())),
    }
}

/// Attaches labeler outcomes (in document order) and reports the failures.
pub fn apply_labels(docs: &mut [DocumentRecord], outcomes: Vec<LabelOutcome>) -> ScoreReport {
    let mut report = ScoreReport::default();
    for (d, r) in docs.iter_mut().zip(outcomes) {
        match r {
            Ok(s) => {
                d.quality_score = Some(f64::from(s));
                d.stage_flags.insert(StageFlag::Scored);
                report.scored += 1;
            }
            Err(reason) => {
                log::warn!("document {} left unscored: {reason}", d.id);
                d.quality_score = None;
                d.stage_flags.remove(&StageFlag::Scored);
                report.unscored.push(UnscoredDoc { id: d.id.clone(), reason });
            }
        }
    }
    report
}

/// Attaches a quality score to every document.
///
/// External files must cover every id (coverage error otherwise). Labeler
/// responses that fail to parse leave the document unscored and are listed
/// in the report; transport failures abort the stage.
pub fn score_documents(docs: &mut [DocumentRecord], source: ScoreSource<'_>) -> Result<ScoreReport> {
    let mut report = ScoreReport::default();
    match source {
        ScoreSource::ExternalFile(file) => {
            let missing: Vec<String> = docs.iter().filter(|d| file.get(&d.id).is_none()).map(|d| d.id.clone()).collect();
            if !missing.is_empty() {
                return Err(Error::Coverage { missing });
            }
            for d in docs.iter_mut() {
                d.quality_score = file.get(&d.id);
                d.stage_flags.insert(StageFlag::Scored);
            }
            report.scored = docs.len();
        }
        ScoreSource::LlmLabeler(gateway) => {
            let outcomes: Vec<LabelOutcome> = docs.par_iter().map(|d| label_outcome(d, gateway)).collect::<Result<_>>()?;
            report = apply_labels(docs, outcomes);
        }
    }
    Ok(report)
}

/// Marks the `floor(drop_fraction * n)` lowest-scoring documents dropped and
/// the rest kept. Ties at the cut go to the lower id first. Returns the
/// documents in their input order.
pub fn percentile_filter(mut docs: Vec<DocumentRecord>, drop_fraction: f64) -> Result<Vec<DocumentRecord>> {
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(Error::Policy(format!("drop_fraction must be in [0, 1), got {drop_fraction}")));
    }
    let unscored: Vec<&str> = docs.iter().filter(|d| d.quality_score.is_none()).map(|d| d.id.as_str()).collect();
    if !unscored.is_empty() {
        return Err(Error::Precondition(format!(
            "{} unscored document(s), first `{}`",
            unscored.len(),
            unscored[0]
        )));
    }
    let n = docs.len();
    let n_drop = drop_count(n, drop_fraction);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&docs[a], &docs[b]);
        x.quality_score.unwrap().total_cmp(&y.quality_score.unwrap()).then_with(|| x.id.cmp(&y.id))
    });
    let dropped: HashSet<usize> = order[..n_drop].iter().copied().collect();
    for (i, d) in docs.iter_mut().enumerate() {
        d.mark(!dropped.contains(&i));
    }
    Ok(docs)
}

/// `floor(fraction * n)`, immune to the representation error of products
/// such as `0.25 * 100` landing a hair below an integer.
pub fn drop_count(n: usize, fraction: f64) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.floor() as usize
    }
}

/// Counts per 0.5-wide bin over [0, 5]; a score of exactly 5 falls in the
/// last bin. Keys are the bin's lower edge formatted with one decimal.
pub fn score_histogram(scores: impl IntoIterator<Item = f64>) -> BTreeMap<String, usize> {
    let mut bins: BTreeMap<String, usize> = (0..10).map(|i| (format!("{:.1}", i as f64 * 0.5), 0)).collect();
    for s in scores {
        let i = ((s / 0.5).floor() as usize).min(9);
        *bins.get_mut(&format!("{:.1}", i as f64 * 0.5)).unwrap() += 1;
    }
    bins
}
