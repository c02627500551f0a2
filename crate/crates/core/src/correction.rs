//! Chunked format and grammar correction of extracted document text.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gateway::{parse_correction, render_prompt, CompletionRequest, Gateway, TemplateId};
use crate::model::{ChunkNote, ChunkNoteKind, DocumentRecord, StageFlag};
use crate::tokenize::Tokenizer;

pub const MIN_CHUNK_BUDGET: usize = 64;
pub const PARAGRAPH_BREAK: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub index: u32,
    pub text: String,
    pub token_count: u64,
    /// Text that followed this chunk in the source: a paragraph break, the
    /// whitespace run at an intra-paragraph split, or empty after the last
    /// chunk and after a hard split.
    pub separator: String,
}

/// Concatenates `text + separator` in order.
pub fn reassemble<'a>(pieces: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut out = String::new();
    for (text, sep) in pieces {
        out.push_str(text);
        out.push_str(sep);
    }
    out
}

/// Splits a document's text-in-effect into chunks of at most `budget` tokens.
///
/// Paragraphs (separated by blank lines) are packed greedily. A paragraph
/// that alone exceeds the budget is cut at the last whitespace that keeps
/// the piece within budget, or at a character boundary when a single word
/// is too long.
pub fn chunk_document(doc: &DocumentRecord, budget: usize, tokenizer: &dyn Tokenizer) -> Result<Vec<Chunk>> {
    if budget < MIN_CHUNK_BUDGET {
        return Err(Error::Policy(format!(
            "max_chunk_tokens must be at least {MIN_CHUNK_BUDGET}, got {budget}"
        )));
    }
    let pieces = chunk_text(doc.text(), budget as u64, tokenizer);
    Ok(pieces
        .into_iter()
        .enumerate()
        .map(|(i, (text, separator))| Chunk {
            doc_id: doc.id.clone(),
            index: i as u32,
            token_count: tokenizer.count(text),
            text: text.to_string(),
            separator: separator.to_string(),
        })
        .collect())
}

/// `(text, separator)` slices of `text`.
pub fn chunk_text<'a>(text: &'a str, budget: u64, tok: &dyn Tokenizer) -> Vec<(&'a str, &'a str)> {
    if text.is_empty() {
        return Vec::new();
    }
    // byte ranges of paragraphs
    let mut paras = Vec::new();
    let mut start = 0;
    for (at, _) in text.match_indices(PARAGRAPH_BREAK) {
        if at < start {
            continue;
        }
        paras.push((start, at));
        start = at + PARAGRAPH_BREAK.len();
    }
    paras.push((start, text.len()));

    let mut out = Vec::new();
    let mut i = 0;
    while i < paras.len() {
        let (s, e) = paras[i];
        if tok.count(&text[s..e]) > budget {
            split_paragraph(text, s, e, budget, tok, &mut out);
            i += 1;
        } else {
            let mut end = e;
            let mut j = i + 1;
            while j < paras.len() && tok.count(&text[s..paras[j].1]) <= budget {
                end = paras[j].1;
                j += 1;
            }
            out.push((s, end));
            i = j;
        }
    }

    let n = out.len();
    out.iter()
        .enumerate()
        .map(|(k, &(s, e))| {
            let next = if k + 1 < n { out[k + 1].0 } else { text.len() };
            (&text[s..e], &text[e..next])
        })
        .collect()
}

fn split_paragraph(text: &str, mut s: usize, e: usize, budget: u64, tok: &dyn Tokenizer, out: &mut Vec<(usize, usize)>) {
    while tok.count(&text[s..e]) > budget {
        let para = &text[s..e];
        // candidate cut points: starts of whitespace runs after some content
        let cuts: Vec<usize> = para
            .char_indices()
            .filter(|&(i, c)| {
                c.is_whitespace() && i > 0 && !para[..i].ends_with(char::is_whitespace)
            })
            .map(|(i, _)| i)
            .collect();
        let best = last_fitting(&cuts, |c| tok.count(&para[..c]) <= budget);
        let cut = match best {
            Some(c) => c,
            None => {
                let chars: Vec<usize> = para.char_indices().map(|(i, _)| i).skip(1).collect();
                last_fitting(&chars, |c| tok.count(&para[..c]) <= budget)
                    .unwrap_or_else(|| chars.first().copied().unwrap_or(para.len()))
            }
        };
        out.push((s, s + cut));
        // resume after the whitespace run; it becomes this piece's separator
        let rest = &para[cut..];
        s += cut + (rest.len() - rest.trim_start().len());
        if s >= e {
            return;
        }
    }
    out.push((s, e));
}

/// Largest element satisfying a predicate that holds on a prefix of `xs`.
fn last_fitting(xs: &[usize], fits: impl Fn(usize) -> bool) -> Option<usize> {
    let n = xs.partition_point(|&x| fits(x));
    n.checked_sub(1).map(|i| xs[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionPolicy {
    pub max_chunk_tokens: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl Default for CorrectionPolicy {
    fn default() -> Self {
        CorrectionPolicy {
            max_chunk_tokens: 2048,
            min_ratio: 0.5,
            max_ratio: 1.5,
        }
    }
}

impl CorrectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_ratio > 0.0 && self.min_ratio <= self.max_ratio && self.max_ratio.is_finite()) {
            return Err(Error::Policy(format!(
                "length ratio bounds [{}, {}] are not a valid interval",
                self.min_ratio, self.max_ratio
            )));
        }
        if self.max_chunk_tokens < MIN_CHUNK_BUDGET {
            return Err(Error::Policy(format!(
                "max_chunk_tokens must be at least {MIN_CHUNK_BUDGET}"
            )));
        }
        Ok(())
    }
}

/// Outcome for one chunk.
#[derive(Debug, Clone, PartialEq)]
struct Corrected {
    text: String,
    note: Option<ChunkNoteKind>,
}

fn chunk_seed(doc_id: &str, index: u32) -> u64 {
    let h = Sha256::new().chain_update(doc_id.as_bytes()).chain_update(index.to_le_bytes()).finalize();
    u64::from_le_bytes(h[..8].try_into().unwrap())
}

fn correct_chunk(chunk: &Chunk, gateway: &Gateway, policy: &CorrectionPolicy) -> Result<Corrected> {
    let core = chunk.text.trim();
    if core.is_empty() {
        return Ok(Corrected {
            text: chunk.text.clone(),
            note: None,
        });
    }
    // edge whitespace is layout, not content; keep it out of the prompt and
    // put it back around the corrected text
    let lead = &chunk.text[..chunk.text.len() - chunk.text.trim_start().len()];
    let trail = &chunk.text[chunk.text.trim_end().len()..];
    let prompt = render_prompt(TemplateId::Correction, &BTreeMap::from([("RawText", core)]))?;
    let request = CompletionRequest::new(prompt)
        .with_seed(chunk_seed(&chunk.doc_id, chunk.index))
        .with_max_output((chunk.token_count * 2).clamp(256, u32::MAX as u64) as u32);
    let response = gateway.complete(&request)?;
    let parsed = match parse_correction(&response.text) {
        Ok(p) => p,
        Err(Error::EmptyCorrection) => {
            return Ok(Corrected {
                text: chunk.text.clone(),
                note: Some(ChunkNoteKind::EmptyCorrection),
            })
        }
        Err(e) => return Err(e),
    };
    let ratio = parsed.text.chars().count() as f64 / core.chars().count() as f64;
    if ratio < policy.min_ratio || ratio > policy.max_ratio {
        log::warn!(
            "{} chunk {}: length ratio {ratio:.2} outside [{}, {}], keeping raw text",
            chunk.doc_id,
            chunk.index,
            policy.min_ratio,
            policy.max_ratio
        );
        return Ok(Corrected {
            text: chunk.text.clone(),
            note: Some(ChunkNoteKind::RatioRejected),
        });
    }
    Ok(Corrected {
        text: format!("{lead}{}{trail}", parsed.text),
        note: (!parsed.preamble_found).then_some(ChunkNoteKind::PreambleMissing),
    })
}

/// Corrects every chunk of `doc` and reassembles `corrected_text`.
///
/// Chunks are corrected in parallel; reassembly keeps chunk order. A
/// rejected or empty correction keeps the chunk's raw text and records a
/// note. Transport failures carry the document id and chunk index.
pub fn correct_document(
    mut doc: DocumentRecord,
    gateway: &Gateway,
    policy: &CorrectionPolicy,
    tokenizer: &dyn Tokenizer,
) -> Result<DocumentRecord> {
    policy.validate()?;
    let source = DocumentRecord {
        corrected_text: None,
        ..doc.clone()
    };
    let chunks = chunk_document(&source, policy.max_chunk_tokens, tokenizer)?;
    let results: Vec<Corrected> = chunks
        .par_iter()
        .map(|c| {
            correct_chunk(c, gateway, policy)
                .map_err(|e| e.in_stage("correct", format!("document {}, chunk {}", c.doc_id, c.index)))
        })
        .collect::<Result<_>>()?;

    doc.correction_notes = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.note.map(|kind| ChunkNote { chunk: i as u32, kind }))
        .collect();
    doc.corrected_text = Some(reassemble(
        results.iter().zip(&chunks).map(|(r, c)| (r.text.as_str(), c.separator.as_str())),
    ));
    doc.recount(tokenizer);
    doc.stage_flags.insert(StageFlag::Corrected);
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Backend, BackendError, CorrectionStyle, RetryPolicy, SyntheticBackend};
    use crate::model::Source;
    use crate::tokenize::ApproxTokenizer;

    fn doc(text: &str) -> DocumentRecord {
        DocumentRecord::new("journal-000001", Source::Journal, "materials", text, &ApproxTokenizer)
    }

    fn echo_gateway() -> Gateway {
        Gateway::new(
            Box::new(SyntheticBackend::new(1).with_correction(CorrectionStyle::Echo)),
            RetryPolicy::no_wait(0),
            4,
        )
    }

    struct Fixed(String);
    impl Backend for Fixed {
        fn id(&self) -> &str {
            "fixed"
        }
        fn complete(&self, _: &CompletionRequest) -> std::result::Result<String, BackendError> {
            Ok(self.0.clone())
        }
    }

    fn fixed(text: &str) -> Gateway {
        Gateway::new(Box::new(Fixed(text.to_string())), RetryPolicy::no_wait(0), 1)
    }

    fn words(n: usize) -> String {
        // "abcd" is exactly one approximate token
        vec!["abcd"; n].join(" ")
    }

    #[test]
    fn small_doc_is_one_chunk() {
        let d = doc(&words(10));
        let c = chunk_document(&d, 2048, &ApproxTokenizer).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].text, d.raw_text);
        assert_eq!(c[0].separator, "");
        assert!(chunk_document(&doc(""), 2048, &ApproxTokenizer).unwrap().is_empty());
        assert!(matches!(chunk_document(&d, 63, &ApproxTokenizer), Err(Error::Policy(_))));
    }

    #[test]
    fn splits_at_the_blank_line() {
        let (p1, p2) = (words(1500), words(1500));
        let d = doc(&format!("{p1}\n\n{p2}"));
        let c = chunk_document(&d, 2048, &ApproxTokenizer).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].text.as_str(), c[0].separator.as_str()), (p1.as_str(), "\n\n"));
        assert_eq!(c[1].text, p2);
        assert_eq!(c[0].token_count, 1500);
    }

    #[test]
    fn oversize_paragraph_cuts_at_whitespace() {
        let d = doc(&words(150));
        let c = chunk_document(&d, 64, &ApproxTokenizer).unwrap();
        assert_eq!(c.iter().map(|c| c.token_count).collect::<Vec<_>>(), vec![64, 64, 22]);
        assert_eq!(c[0].separator, " ");
        assert_eq!(reassemble(c.iter().map(|c| (c.text.as_str(), c.separator.as_str()))), d.raw_text);
    }

    #[test]
    fn single_long_word_is_hard_split() {
        let d = doc(&"x".repeat(1000));
        let c = chunk_document(&d, 64, &ApproxTokenizer).unwrap();
        assert!(c.iter().all(|c| c.token_count <= 64 && c.separator.is_empty()));
        assert_eq!(c.iter().map(|c| c.text.as_str()).collect::<String>(), d.raw_text);
    }

    #[test]
    fn echo_correction_is_identity_and_idempotent() {
        let d = doc("  first  paragraph \n\n\n\nsecond one\n");
        let once = correct_document(d.clone(), &echo_gateway(), &CorrectionPolicy::default(), &ApproxTokenizer).unwrap();
        assert_eq!(once.corrected_text.as_deref(), Some(d.raw_text.as_str()));
        assert!(once.stage_flags.contains(&StageFlag::Corrected));
        assert!(once.correction_notes.is_empty());
        let twice = correct_document(once.clone(), &echo_gateway(), &CorrectionPolicy::default(), &ApproxTokenizer).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn ratio_guard_keeps_raw_text() {
        let d = doc("short text here");
        let long = format!("Here is the corrected version of the text: {}", "blah ".repeat(30));
        let out = correct_document(d.clone(), &fixed(&long), &CorrectionPolicy::default(), &ApproxTokenizer).unwrap();
        assert_eq!(out.corrected_text.as_deref(), Some("short text here"));
        assert_eq!(out.correction_notes, vec![ChunkNote { chunk: 0, kind: ChunkNoteKind::RatioRejected }]);
    }

    #[test]
    fn missing_preamble_and_empty_responses_are_noted() {
        let d = doc("some raw text");
        let out = correct_document(d.clone(), &fixed("some clean text"), &CorrectionPolicy::default(), &ApproxTokenizer).unwrap();
        assert_eq!(out.corrected_text.as_deref(), Some("some clean text"));
        assert_eq!(out.correction_notes[0].kind, ChunkNoteKind::PreambleMissing);
        let out = correct_document(d, &fixed("Here is the corrected version of the text:"), &CorrectionPolicy::default(), &ApproxTokenizer).unwrap();
        assert_eq!(out.corrected_text.as_deref(), Some("some raw text"));
        assert_eq!(out.correction_notes[0].kind, ChunkNoteKind::EmptyCorrection);
    }

    #[test]
    fn transport_errors_name_doc_and_chunk() {
        struct Down;
        impl Backend for Down {
            fn id(&self) -> &str {
                "down"
            }
            fn complete(&self, _: &CompletionRequest) -> std::result::Result<String, BackendError> {
                Err(BackendError::Transient("503".into()))
            }
        }
        let gw = Gateway::new(Box::new(Down), RetryPolicy::no_wait(1), 1);
        let err = correct_document(doc("text"), &gw, &CorrectionPolicy::default(), &ApproxTokenizer).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("journal-000001") && msg.contains("chunk 0"), "{msg}");
        assert_eq!(err.exit_code(), 3);
    }
}
