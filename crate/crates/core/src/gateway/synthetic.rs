//! Seeded offline responder.
//!
//! Recognizes which of the four prompt templates a request was rendered
//! from and answers in that template's response format. The response is a
//! pure function of (backend seed, request seed, prompt), so results do not
//! depend on call order or concurrency.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::backend::{Backend, BackendError};
use super::parse::format_rating;
use super::template::CORRECTION_PREAMBLE;
use super::CompletionRequest;
use crate::model::AspectScores;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrectionStyle {
    /// Return the raw text unchanged.
    Echo,
    /// Collapse whitespace runs inside each paragraph.
    #[default]
    Reflow,
}

#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    seed: u64,
    correction: CorrectionStyle,
    id: String,
}

impl SyntheticBackend {
    pub fn new(seed: u64) -> Self {
        SyntheticBackend {
            seed,
            correction: CorrectionStyle::default(),
            id: format!("mock-synthetic:{seed}"),
        }
    }

    pub fn with_correction(mut self, style: CorrectionStyle) -> Self {
        self.correction = style;
        self
    }

    fn rng(&self, request: &CompletionRequest) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(request.seed.unwrap_or(0).to_le_bytes());
        h.update(request.prompt.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    fn correct(&self, prompt: &str) -> Option<String> {
        let start = prompt.find("Raw Text:\n\n")? + "Raw Text:\n\n".len();
        let end = prompt.rfind("\n\nStart your response with")?;
        let raw = prompt.get(start..end)?;
        let body = match self.correction {
            CorrectionStyle::Echo => raw.to_string(),
            CorrectionStyle::Reflow => raw
                .split("\n\n")
                .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
                .collect::<Vec<_>>()
                .join("\n\n"),
        };
        Some(format!("{CORRECTION_PREAMBLE}\n\n{body}"))
    }

    fn label(&self, prompt: &str, rng: &mut ChaCha8Rng) -> String {
        let words = prompt
            .split("The extract:\n")
            .nth(1)
            .map(|s| s.split_whitespace().count())
            .unwrap_or(0);
        let score: u8 = rng.gen_range(0..=5);
        format!(
            "The extract has about {words} words of subject material with a consistent style.\n\nEducational score: {score}"
        )
    }

    fn rate(&self, rng: &mut ChaCha8Rng) -> String {
        let mut aspects = [0u8; 5];
        for a in aspects.iter_mut() {
            *a = rng.gen_range(2..=5);
        }
        let scores = AspectScores::new(aspects, "The instruction is specific and the response follows from the context.")
            .expect("aspects in range");
        format_rating(&scores)
    }

    fn generate(&self, prompt: &str, rng: &mut ChaCha8Rng) -> Option<String> {
        let marker = "includes the keywords:";
        let after = &prompt[prompt.find(marker)? + marker.len()..];
        let after = after.trim_start();
        let line_end = after.find("\n\n").unwrap_or(after.len());
        let keywords: Vec<&str> = after[..line_end]
            .trim()
            .trim_end_matches('.')
            .split(", ")
            .map(str::trim)
            .filter(|k| !k.is_empty())
            .collect();
        if keywords.is_empty() {
            return None;
        }

        const FRAMES: [&str; 6] = [
            "Measurements relating {a} to {b} were repeated across {c} samples",
            "The role of {a} was examined alongside {b} and {c}",
            "Earlier reports linked {a} with {b}, while {c} remained unexplained",
            "A comparison of {a}, {b} and {c} showed distinct trends",
            "Samples rich in {a} responded differently to {b} under {c}",
            "We observed that {a} shifts as {b} increases, especially near {c}",
        ];
        let mut sentences = Vec::new();
        for chunk in keywords.chunks(3) {
            let frame = FRAMES.choose(rng).unwrap();
            let pick = |i: usize| chunk.get(i).copied().unwrap_or(chunk[0]);
            sentences.push(format!(
                "{}.",
                frame
                    .replace("{a}", pick(0))
                    .replace("{b}", pick(1))
                    .replace("{c}", pick(2))
            ));
        }
        let value: f64 = rng.gen_range(1.0..500.0);
        let context = format!(
            "{} The reported value was {value:.2} units in the reference condition.",
            sentences.join(" ")
        );
        let answer = format!(
            "{} ({value:.2}); related terms: {}",
            keywords[0],
            keywords[1..keywords.len().min(4)].join(", ")
        );
        let question = format!("Which measured quantity is associated with {}?", keywords[0]);
        let obj = if prompt.contains("\"question\"") {
            json!({"text": context, "question": question, "answer": answer})
        } else {
            json!({"text": context, "answer": answer})
        };
        Some(obj.to_string())
    }
}

impl Backend for SyntheticBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError> {
        let prompt = request.prompt.as_str();
        let mut rng = self.rng(request);
        let out = if prompt.contains(CORRECTION_PREAMBLE) && prompt.contains("Raw Text:") {
            self.correct(prompt)
        } else if prompt.contains("checking the quality of instruction-tuning data") {
            Some(self.rate(&mut rng))
        } else if prompt.contains("Educational score:") {
            Some(self.label(prompt, &mut rng))
        } else if prompt.contains("includes the keywords:") {
            self.generate(prompt, &mut rng)
        } else {
            None
        };
        out.ok_or_else(|| BackendError::Fatal("synthetic backend does not recognize this prompt".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{
        join_keywords, parse_correction, parse_educational_score, parse_generation, parse_rating,
        render_prompt, TemplateId,
    };
    use std::collections::BTreeMap;

    fn ask(b: &SyntheticBackend, prompt: &str) -> String {
        b.complete(&CompletionRequest::new(prompt).with_seed(7)).unwrap()
    }

    #[test]
    fn answers_every_template_in_its_format() {
        let b = SyntheticBackend::new(1);
        let p = render_prompt(TemplateId::Correction, &BTreeMap::from([("RawText", "a  b\n c\n\nd")])).unwrap();
        assert_eq!(parse_correction(&ask(&b, &p)).unwrap().text, "a b c\n\nd");

        let p = render_prompt(TemplateId::CptLabel, &BTreeMap::from([("extract", "some text")])).unwrap();
        assert!(parse_educational_score(&ask(&b, &p)).unwrap() <= 5);

        let kws: Vec<String> = ["alloy", "phase", "grain-size", "creep"].map(String::from).to_vec();
        let joined = join_keywords(&kws);
        let p = render_prompt(TemplateId::Generation, &BTreeMap::from([("keywords", joined.as_str())])).unwrap();
        let g = parse_generation(&ask(&b, &p)).unwrap();
        for k in &kws {
            assert!(g.context.contains(k.as_str()), "{k} missing from {}", g.context);
        }

        let p = render_prompt(
            TemplateId::SftRating,
            &BTreeMap::from([("context", "c"), ("question", "q"), ("answer", "a")]),
        )
        .unwrap();
        let s = parse_rating(&ask(&b, &p)).unwrap();
        assert!(s.aspects().iter().all(|&a| (2..=5).contains(&a)));
    }

    #[test]
    fn deterministic_per_prompt_and_seed() {
        let b = SyntheticBackend::new(3);
        let p = render_prompt(TemplateId::CptLabel, &BTreeMap::from([("extract", "x y z")])).unwrap();
        let r = CompletionRequest::new(p.clone()).with_seed(11);
        assert_eq!(b.complete(&r).unwrap(), b.complete(&r).unwrap());
        let other = SyntheticBackend::new(3);
        assert_eq!(other.complete(&r).unwrap(), b.complete(&r).unwrap());
    }

    #[test]
    fn echo_style_returns_input() {
        let b = SyntheticBackend::new(0).with_correction(CorrectionStyle::Echo);
        let p = render_prompt(TemplateId::Correction, &BTreeMap::from([("RawText", "a  b")])).unwrap();
        assert_eq!(parse_correction(&ask(&b, &p)).unwrap().text, "a  b");
    }

    #[test]
    fn unknown_prompt_is_fatal() {
        let b = SyntheticBackend::new(0);
        assert!(matches!(
            b.complete(&CompletionRequest::new("hello")),
            Err(BackendError::Fatal(_))
        ));
    }
}
