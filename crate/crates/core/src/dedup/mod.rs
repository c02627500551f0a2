//! Near-duplicate removal for synthetic instructions.
//!
//! Two instructions are similar when
//! `(1 - lev(q1, q2)) * (1 - lev(a1, a2)) >= threshold`, with `lev` the
//! max-length-normalized edit distance over questions and answers. Similar
//! pairs are merged with a disjoint-set forest and each cluster keeps only
//! its lowest-id member. Groups (by task type by default) are processed
//! independently.
//!
//! Because `|len(a) - len(b)| / max(len) <= lev(a, b)`, the length gap gives
//! an upper bound on similarity; pairs whose bound is already below the
//! threshold are skipped without computing any edit distance.

mod dsu;
mod levenshtein;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dsu::DisjointSet;
pub use levenshtein::{bounded_levenshtein, levenshtein, levenshtein_chars, normalize, normalized_levenshtein};

use crate::error::{Error, Result};
use crate::model::InstructionRecord;

pub const DEFAULT_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DedupMode {
    FixedThreshold(f64),
    /// Search the threshold per group so the removed fraction lands within
    /// `TARGET_TOLERANCE` of the target.
    TargetFraction(f64),
}

pub const TARGET_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    #[default]
    TaskType,
    Domain,
    DomainTask,
    None,
}

impl GroupBy {
    fn key(self, r: &InstructionRecord) -> String {
        match self {
            GroupBy::TaskType => r.task_type.as_str().to_string(),
            GroupBy::Domain => r.domain.clone(),
            GroupBy::DomainTask => format!("{}/{}", r.domain, r.task_type),
            GroupBy::None => "all".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DedupPolicy {
    pub mode: DedupMode,
    pub group_by: GroupBy,
    /// Length-gap skipping; results are identical either way.
    pub prefilter: bool,
}

impl Default for DedupPolicy {
    fn default() -> Self {
        DedupPolicy {
            mode: DedupMode::FixedThreshold(DEFAULT_THRESHOLD),
            group_by: GroupBy::TaskType,
            prefilter: true,
        }
    }
}

impl DedupPolicy {
    pub fn fixed(threshold: f64) -> Self {
        DedupPolicy {
            mode: DedupMode::FixedThreshold(threshold),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            DedupMode::FixedThreshold(t) if !(t > 0.0 && t <= 1.0) => {
                Err(Error::Policy(format!("threshold must be in (0, 1], got {t}")))
            }
            DedupMode::TargetFraction(f) if !(0.0..1.0).contains(&f) => {
                Err(Error::Policy(format!("target_fraction must be in [0, 1), got {f}")))
            }
            _ => Ok(()),
        }
    }
}

/// Similarity from component distances; the single formula every path uses.
#[inline]
pub fn similarity_from_distances(dq: usize, max_q: usize, da: usize, max_a: usize) -> f64 {
    (1.0 - normalize(dq, max_q)) * (1.0 - normalize(da, max_a))
}

pub fn pair_similarity(r1: &InstructionRecord, r2: &InstructionRecord) -> f64 {
    let (q1, q2): (Vec<char>, Vec<char>) = (r1.question.chars().collect(), r2.question.chars().collect());
    let (a1, a2): (Vec<char>, Vec<char>) = (r1.answer.chars().collect(), r2.answer.chars().collect());
    similarity_from_distances(
        levenshtein_chars(&q1, &q2),
        q1.len().max(q2.len()),
        levenshtein_chars(&a1, &a2),
        a1.len().max(a2.len()),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: String,
    pub records: usize,
    pub pairs_evaluated: u64,
    pub pairs_prefilter_skipped: u64,
    /// Clusters with more than one member.
    pub clusters: usize,
    pub removed: usize,
    pub removed_fraction: f64,
    pub effective_threshold: f64,
    /// Target-fraction mode only: whether the band was reached.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_attained: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupReport {
    pub groups: Vec<GroupReport>,
}

impl DedupReport {
    pub fn removed(&self) -> usize {
        self.groups.iter().map(|g| g.removed).sum()
    }

    pub fn pairs_prefilter_skipped(&self) -> u64 {
        self.groups.iter().map(|g| g.pairs_prefilter_skipped).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: u64,
    pub group: String,
    pub representative: String,
    /// Ascending ids, representative included.
    pub members: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DedupOutcome {
    /// Sorted by id.
    pub kept: Vec<InstructionRecord>,
    /// Multi-member clusters only.
    pub clusters: Vec<Cluster>,
    pub report: DedupReport,
}

pub fn dedup(records: Vec<InstructionRecord>, policy: &DedupPolicy) -> Result<DedupOutcome> {
    policy.validate()?;
    let mut groups: BTreeMap<String, Vec<InstructionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(policy.group_by.key(&r)).or_default().push(r);
    }

    let mut kept = Vec::new();
    let mut clusters = Vec::new();
    let mut reports = Vec::new();
    for (key, mut members) in groups {
        members.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = members.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::schema("id", format!("duplicate id `{}`", w[0].id)));
        }
        let items: Vec<Item> = members.iter().map(Item::new).collect();
        let (result, attained) = match policy.mode {
            DedupMode::FixedThreshold(t) => (cluster_group(&items, t, policy.prefilter), None),
            DedupMode::TargetFraction(f) => {
                let (r, ok) = search_threshold(&items, f, policy.prefilter);
                (r, Some(ok))
            }
        };

        let mut slots: Vec<Option<InstructionRecord>> = members.into_iter().map(Some).collect();
        let mut multi = 0;
        for set in &result.sets {
            // members are sorted by id, so the first index is the lowest id
            let rep = set[0];
            let mut rec = slots[rep].take().expect("each index in one set");
            if set.len() > 1 {
                multi += 1;
                let cluster_id = clusters.len() as u64;
                rec.cluster_id = Some(cluster_id);
                clusters.push(Cluster {
                    cluster_id,
                    group: key.clone(),
                    representative: rec.id.clone(),
                    members: set.iter().map(|&i| items[i].id.clone()).collect(),
                });
            } else {
                rec.cluster_id = None;
            }
            kept.push(rec);
        }
        let n = items.len();
        let removed = n - result.sets.len();
        reports.push(GroupReport {
            group: key,
            records: n,
            pairs_evaluated: result.evaluated,
            pairs_prefilter_skipped: result.skipped,
            clusters: multi,
            removed,
            removed_fraction: if n == 0 { 0.0 } else { removed as f64 / n as f64 },
            effective_threshold: result.threshold,
            target_attained: attained,
        });
    }
    kept.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(DedupOutcome {
        kept,
        clusters,
        report: DedupReport { groups: reports },
    })
}

struct Item {
    id: String,
    question: Vec<char>,
    answer: Vec<char>,
}

impl Item {
    fn new(r: &InstructionRecord) -> Self {
        Item {
            id: r.id.clone(),
            question: r.question.chars().collect(),
            answer: r.answer.chars().collect(),
        }
    }
}

struct GroupResult {
    threshold: f64,
    /// Index sets, each ascending, ordered by first member.
    sets: Vec<Vec<usize>>,
    evaluated: u64,
    skipped: u64,
}

/// Upper bound on `1 - normalized distance` from lengths alone.
#[inline]
fn length_factor(la: usize, lb: usize) -> f64 {
    1.0 - normalize(la.abs_diff(lb), la.max(lb))
}

/// Largest distance that could still satisfy `factor(d, max_len) >= need`,
/// plus one unit of slack so floating-point rounding cannot cut a true
/// match.
#[inline]
fn distance_budget(need: f64, max_len: usize) -> usize {
    if need <= 0.0 {
        return max_len;
    }
    let budget = ((1.0 - need) * max_len as f64).floor();
    (budget.max(0.0) as usize + 1).min(max_len)
}

fn cluster_group(items: &[Item], threshold: f64, prefilter: bool) -> GroupResult {
    let n = items.len();
    // ascending answer length lets the scan stop once the answer gap alone
    // rules out every later partner
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (items[i].answer.len(), items[i].question.len(), i));

    let per_row: Vec<(Vec<(u32, u32)>, u64, u64)> = (0..n)
        .into_par_iter()
        .map(|pos| {
            let i = order[pos];
            let (qi, ai) = (&items[i].question, &items[i].answer);
            let mut edges = Vec::new();
            let (mut evaluated, mut skipped) = (0u64, 0u64);
            for (off, &j) in order[pos + 1..].iter().enumerate() {
                let (qj, aj) = (&items[j].question, &items[j].answer);
                let fa_bound = length_factor(ai.len(), aj.len());
                if prefilter {
                    // later partners only get longer; the margin keeps a
                    // rounding wobble in the bound from ending the scan early
                    if fa_bound < threshold - 1e-9 {
                        skipped += (n - pos - 1 - off) as u64;
                        break;
                    }
                    if fa_bound * length_factor(qi.len(), qj.len()) < threshold {
                        skipped += 1;
                        continue;
                    }
                }
                evaluated += 1;
                if is_similar(qi, qj, ai, aj, fa_bound, threshold) {
                    edges.push((i.min(j) as u32, i.max(j) as u32));
                }
            }
            (edges, evaluated, skipped)
        })
        .collect();

    let mut dsu = DisjointSet::new(n);
    let (mut evaluated, mut skipped) = (0, 0);
    for (edges, e, s) in per_row {
        evaluated += e;
        skipped += s;
        for (a, b) in edges {
            dsu.union(a as usize, b as usize);
        }
    }
    GroupResult {
        threshold,
        sets: dsu.sets(),
        evaluated,
        skipped,
    }
}

fn is_similar(qi: &[char], qj: &[char], ai: &[char], aj: &[char], fa_bound: f64, threshold: f64) -> bool {
    let max_q = qi.len().max(qj.len());
    let max_a = ai.len().max(aj.len());
    // the answer factor can never exceed its length bound
    if fa_bound < threshold {
        return false;
    }
    let q_need = threshold / fa_bound;
    let Some(dq) = bounded_levenshtein(qi, qj, distance_budget(q_need, max_q)) else {
        return false;
    };
    let fq = 1.0 - normalize(dq, max_q);
    if fq * fa_bound < threshold {
        return false;
    }
    let a_need = threshold / fq;
    let Some(da) = bounded_levenshtein(ai, aj, distance_budget(a_need, max_a)) else {
        return false;
    };
    similarity_from_distances(dq, max_q, da, max_a) >= threshold
}

/// Bisects the threshold so the removed fraction lands in
/// `[target - tol, target + tol]`; falls back to the closest probe.
fn search_threshold(items: &[Item], target: f64, prefilter: bool) -> (GroupResult, bool) {
    let n = items.len().max(1) as f64;
    let removed = |r: &GroupResult| (items.len() - r.sets.len()) as f64 / n;
    let in_band = |f: f64| (f - target).abs() <= TARGET_TOLERANCE + 1e-12;

    // threshold 1 removes the least (exact duplicates only)
    let top = cluster_group(items, 1.0, prefilter);
    if in_band(removed(&top)) || removed(&top) > target {
        let ok = in_band(removed(&top));
        return (top, ok);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best = top;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if mid <= 0.0 || hi - lo < 1e-9 {
            break;
        }
        let r = cluster_group(items, mid, prefilter);
        let f = removed(&r);
        let better = (f - target).abs() < (removed(&best) - target).abs();
        if in_band(f) {
            return (r, true);
        }
        if f > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if better {
            best = r;
        }
    }
    (best, false)
}
