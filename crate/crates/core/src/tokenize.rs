//! Token counting.
//!
//! Counts are only used for accounting (manifests, chunk budgets), so the
//! tokenizer is a trait object and the default needs no model files.

pub trait Tokenizer: Send + Sync {
    /// Recorded in manifests next to every token total.
    fn name(&self) -> &str;

    fn count(&self, text: &str) -> u64;
}

/// Whitespace split, then `ceil(bytes / 4)` units per word.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokenizer;

impl ApproxTokenizer {
    pub const NAME: &'static str = "approx-ws-4b";
}

impl Tokenizer for ApproxTokenizer {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn count(&self, text: &str) -> u64 {
        text.split_whitespace()
            .map(|w| w.len().div_ceil(4) as u64)
            .sum()
    }
}

/// One unit per whitespace-separated word.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordTokenizer;

impl Tokenizer for WordTokenizer {
    fn name(&self) -> &str {
        "words"
    }

    fn count(&self, text: &str) -> u64 {
        text.split_whitespace().count() as u64
    }
}

pub fn by_name(name: &str) -> Option<Box<dyn Tokenizer>> {
    match name {
        ApproxTokenizer::NAME | "approx" => Some(Box::new(ApproxTokenizer)),
        "words" => Some(Box::new(WordTokenizer)),
        _ => None,
    }
}
