//! Per-domain keyword probability tables and temperature sampling.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "of", "in", "on", "at", "to", "for", "with", "by", "from",
    "as", "is", "are", "was", "were", "be", "been", "this", "that", "these", "those", "it",
    "its", "we", "our", "which",
];

pub fn default_stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordTable {
    pub domain: String,
    /// Sorted by descending probability, then word.
    entries: Vec<(String, f64)>,
    /// Stopwords the table was built with, recorded in the file header.
    pub stopwords: BTreeSet<String>,
}

/// Lowercases, trims non-alphanumeric characters from both ends; internal
/// punctuation (hyphens, dots in formulas) survives.
pub fn normalize_word(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

pub fn build_keyword_table<S: AsRef<str> + Sync>(
    domain: &str,
    texts: &[S],
    stopwords: &BTreeSet<String>,
) -> Result<KeywordTable> {
    let counts = texts
        .par_iter()
        .fold(HashMap::<String, u64>::new, |mut acc, text| {
            for raw in text.as_ref().split_whitespace() {
                let w = normalize_word(raw);
                if !w.is_empty() && !stopwords.contains(&w) {
                    *acc.entry(w).or_default() += 1;
                }
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (w, c) in b {
                *a.entry(w).or_default() += c;
            }
            a
        });
    let total: u64 = counts.values().sum();
    if total == 0 {
        return Err(Error::EmptyTable);
    }
    let mut entries: Vec<(String, f64)> = counts
        .into_iter()
        .map(|(w, c)| (w, c as f64 / total as f64))
        .collect();
    sort_entries(&mut entries);
    Ok(KeywordTable {
        domain: domain.to_string(),
        entries,
        stopwords: stopwords.clone(),
    })
}

fn sort_entries(entries: &mut [(String, f64)]) {
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

impl KeywordTable {
    /// Builds a table from explicit (word, probability) pairs, validating them.
    pub fn from_entries(
        domain: impl Into<String>,
        entries: Vec<(String, f64)>,
        stopwords: BTreeSet<String>,
    ) -> Result<Self> {
        let mut t = KeywordTable {
            domain: domain.into(),
            entries,
            stopwords,
        };
        sort_entries(&mut t.entries);
        t.validate()?;
        Ok(t)
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn probability(&self, word: &str) -> Option<f64> {
        self.entries.iter().find(|(w, _)| w == word).map(|e| e.1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyTable);
        }
        let mut seen = BTreeSet::new();
        for (w, p) in &self.entries {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::schema("word", format!("`{w}` is empty or contains whitespace")));
            }
            if self.stopwords.contains(w) {
                return Err(Error::schema("word", format!("`{w}` is a stopword")));
            }
            if !seen.insert(w.as_str()) {
                return Err(Error::schema("word", format!("`{w}` appears twice")));
            }
            if !(p.is_finite() && *p > 0.0 && *p <= 1.0) {
                return Err(Error::range(format!("probability of `{w}`"), p));
            }
        }
        let sum: f64 = self.entries.iter().map(|e| e.1).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::range("probability sum", sum));
        }
        Ok(())
    }

    /// `k` distinct words drawn without replacement with weights
    /// `p^(1/temperature)`, renormalized over the remaining words after
    /// every draw.
    pub fn sample(&self, k: usize, temperature: f64, seed: u64) -> Result<Vec<String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(k, temperature, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(
        &self,
        k: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Vec<String>> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::Policy(format!("temperature must be positive, got {temperature}")));
        }
        if k > self.entries.len() {
            return Err(Error::InsufficientVocabulary {
                requested: k,
                available: self.entries.len(),
            });
        }
        let inv_t = 1.0 / temperature;
        // log-space keeps tiny probabilities from underflowing at large 1/T
        let logs: Vec<f64> = self.entries.iter().map(|(_, p)| p.ln() * inv_t).collect();
        let max_log = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = logs.iter().map(|l| (l - max_log).exp()).collect();

        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let total: f64 = weights.iter().sum();
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < w {
                    break;
                }
                target -= w;
            }
            // rounding can leave `target` past the last weight; `pick` is then
            // the last live entry
            let i = pick.expect("k <= live entries");
            out.push(self.entries[i].0.clone());
            weights[i] = 0.0;
        }
        Ok(out)
    }

    /// Two-column table file: `#` header lines, then `word<TAB>probability`
    /// sorted by descending probability.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# domain: {}", self.domain).unwrap();
        let sw: Vec<&str> = self.stopwords.iter().map(String::as_str).collect();
        writeln!(s, "# stopwords: {}", sw.join(",")).unwrap();
        for (w, p) in &self.entries {
            writeln!(s, "{w}\t{p:?}").unwrap();
        }
        s
    }

    pub fn parse_file(text: &str) -> Result<Self> {
        let mut domain = None;
        let mut stopwords = BTreeSet::new();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let at = |e: Error| e.in_stage("keyword table", format!("line {}", n + 1));
            if let Some(h) = line.strip_prefix('#') {
                let h = h.trim();
                if let Some(d) = h.strip_prefix("domain:") {
                    domain = Some(d.trim().to_string());
                } else if let Some(list) = h.strip_prefix("stopwords:") {
                    stopwords = list
                        .split(',')
                        .map(str::trim)
                        .filter(|w| !w.is_empty())
                        .map(String::from)
                        .collect();
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (word, prob) = line
                .split_once('\t')
                .ok_or_else(|| at(Error::schema("row", "expected `word<TAB>probability`")))?;
            let p: f64 = prob
                .trim()
                .parse()
                .map_err(|_| at(Error::schema("probability", format!("`{prob}` is not a number"))))?;
            entries.push((word.to_string(), p));
        }
        let domain = domain.ok_or_else(|| Error::schema("domain", "missing `# domain:` header"))?;
        KeywordTable::from_entries(domain, entries, stopwords)
    }
}
