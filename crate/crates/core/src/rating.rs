//! Five-aspect instruction rating and the average-score gate.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{parse_rating, render_prompt, CompletionRequest, Gateway, TemplateId};
use crate::model::{AspectScores, InstructionRecord};

pub const DEFAULT_MIN_AVERAGE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnratedRecord {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RatingReport {
    pub rated: usize,
    pub unrated: Vec<UnratedRecord>,
}

/// Scores, or the last parse failure.
pub type RatingOutcome = std::result::Result<AspectScores, String>;

pub fn rating_prompt(record: &InstructionRecord) -> Result<String> {
    render_prompt(
        TemplateId::SftRating,
        &BTreeMap::from([
            ("context", record.context.as_str()),
            ("question", record.question.as_str()),
            ("answer", record.answer.as_str()),
        ]),
    )
}

/// Rates one record. Unparseable responses are retried with a fresh seed up
/// to `parse_retries` more times; `Ok(Err(reason))` means the record stays
/// unrated.
pub fn rate_instruction(
    record: &InstructionRecord,
    gateway: &Gateway,
    parse_retries: u32,
) -> Result<RatingOutcome> {
    let prompt = rating_prompt(record)?;
    let mut last = String::new();
    for attempt in 0..=parse_retries {
        let request = CompletionRequest::new(prompt.as_str()).with_seed(u64::from(attempt)).with_max_output(1024);
        let response = gateway.complete(&request)?;
        match parse_rating(&response.text) {
            Ok(scores) => return Ok(Ok(scores)),
            Err(e) => last = e.to_string(),
        }
    }
    Ok(Err(last))
}

/// Attaches scores in place; failures are reported, never dropped.
pub fn rate_records(records: &mut [InstructionRecord], gateway: &Gateway, parse_retries: u32) -> Result<RatingReport> {
    let results: Vec<_> = records
        .par_iter()
        .map(|r| {
            rate_instruction(r, gateway, parse_retries).map_err(|e| e.in_stage("rate", format!("record {}", r.id)))
        })
        .collect::<Result<_>>()?;
    Ok(apply_ratings(records, results))
}

/// Attaches rating outcomes (in record order) and reports the failures.
pub fn apply_ratings(records: &mut [InstructionRecord], outcomes: Vec<RatingOutcome>) -> RatingReport {
    let mut report = RatingReport::default();
    for (r, outcome) in records.iter_mut().zip(outcomes) {
        match outcome {
            Ok(scores) => {
                r.aspect_scores = Some(scores);
                report.rated += 1;
            }
            Err(reason) => {
                log::warn!("record {} left unrated: {reason}", r.id);
                r.aspect_scores = None;
                report.unrated.push(UnratedRecord { id: r.id.clone(), reason });
            }
        }
    }
    report
}

/// `true` unless the average is strictly below `min_average`.
pub fn passes(scores: &AspectScores, min_average: f64) -> bool {
    !(scores.average() < min_average)
}

/// Splits rated records into (kept, dropped), preserving input order.
pub fn threshold_filter(
    records: Vec<InstructionRecord>,
    min_average: f64,
) -> Result<(Vec<InstructionRecord>, Vec<InstructionRecord>)> {
    if !min_average.is_finite() {
        return Err(Error::Policy(format!("min_average must be finite, got {min_average}")));
    }
    if let Some(r) = records.iter().find(|r| r.aspect_scores.is_none()) {
        let n = records.iter().filter(|r| r.aspect_scores.is_none()).count();
        return Err(Error::Precondition(format!("{n} unrated record(s), first `{}`", r.id)));
    }
    Ok(records
        .into_iter()
        .partition(|r| passes(r.aspect_scores.as_ref().unwrap(), min_average)))
}

/// Counts per aspect per score value (0 to 5).
pub fn aspect_histogram<'a>(records: impl IntoIterator<Item = &'a InstructionRecord>) -> BTreeMap<String, [usize; 6]> {
    let mut out: BTreeMap<String, [usize; 6]> =
        AspectScores::NAMES.iter().map(|n| (n.to_string(), [0; 6])).collect();
    for s in records.into_iter().filter_map(|r| r.aspect_scores.as_ref()) {
        for (name, v) in AspectScores::NAMES.iter().zip(s.aspects()) {
            out.get_mut(*name).unwrap()[v as usize] += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{format_rating, Backend, BackendError, RetryPolicy};
    use crate::model::TaskType;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn rec(id: &str, scores: Option<[u8; 5]>) -> InstructionRecord {
        InstructionRecord {
            id: id.into(),
            domain: "m".into(),
            task_type: TaskType::EntityExtraction,
            context: "c".into(),
            question: "q".into(),
            answer: "a".into(),
            sampled_keywords: vec![],
            aspect_scores: scores.map(|s| AspectScores::new(s, "e").unwrap()),
            cluster_id: None,
        }
    }

    struct Script {
        replies: Vec<String>,
        calls: AtomicU32,
    }
    impl Backend for Script {
        fn id(&self) -> &str {
            "script"
        }
        fn complete(&self, _: &CompletionRequest) -> std::result::Result<String, BackendError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            Ok(self.replies[i.min(self.replies.len() - 1)].clone())
        }
    }

    fn script(replies: &[&str]) -> Gateway {
        let replies = replies.iter().map(|s| s.to_string()).collect();
        Gateway::new(Box::new(Script { replies, calls: AtomicU32::new(0) }), RetryPolicy::no_wait(0), 1)
    }

    #[test]
    fn all_fives() {
        let fives = format_rating(&AspectScores::new([5; 5], "great").unwrap());
        let mut recs = vec![rec("a", None)];
        rate_records(&mut recs, &script(&[&fives]), 0).unwrap();
        let s = recs[0].aspect_scores.as_ref().unwrap();
        assert_eq!((s.total, s.average()), (25, 5.0));
    }

    #[test]
    fn prose_without_separator_is_unrated_after_retries() {
        let mut recs = vec![rec("a", None)];
        let report = rate_records(&mut recs, &script(&["just prose"]), 2).unwrap();
        assert_eq!(report.unrated[0].id, "a");
        assert!(recs[0].aspect_scores.is_none());
    }

    #[test]
    fn parse_retry_recovers() {
        let good = format_rating(&AspectScores::new([4; 5], "ok").unwrap());
        let mut recs = vec![rec("a", None)];
        let report = rate_records(&mut recs, &script(&["garbage", &good]), 1).unwrap();
        assert_eq!(report.rated, 1);
    }

    #[test]
    fn strict_less_than_drops() {
        let recs = vec![rec("keep", Some([5, 2, 5, 4, 4])), rec("drop", Some([5, 2, 5, 4, 3]))];
        let (kept, dropped) = threshold_filter(recs, DEFAULT_MIN_AVERAGE).unwrap();
        assert_eq!(kept[0].id, "keep");
        assert_eq!(dropped[0].id, "drop");
        let (kept, _) = threshold_filter(vec![rec("z", Some([0; 5]))], 0.0).unwrap();
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn unrated_fails_fast() {
        let recs = vec![rec("a", Some([5; 5])), rec("b", None)];
        assert!(matches!(threshold_filter(recs, 4.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn histogram_counts() {
        let recs = [rec("a", Some([5, 2, 5, 4, 4])), rec("b", Some([5, 3, 0, 4, 4]))];
        let h = aspect_histogram(&recs);
        assert_eq!(h["Clarity"][5], 2);
        assert_eq!(h["Correctness"], [1, 0, 0, 0, 0, 1]);
    }
}
