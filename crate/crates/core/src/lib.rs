//! Curation pipeline for a quality-filtered continual-pre-training corpus and
//! a deduplicated, quality-gated synthetic instruction set.

pub mod config;
pub mod correction;
pub mod dedup;
pub mod error;
pub mod gateway;
pub mod jsonl;
pub mod keywords;
pub mod model;
pub mod pipeline;
pub mod quality;
pub mod rating;
pub mod synthesis;
pub mod tokenize;

pub use error::{Error, Result};
