//! Completion gateway: prompt rendering, a pluggable backend, retries with
//! exponential backoff, a bound on in-flight requests, and the response
//! parsers.

mod backend;
mod parse;
mod synthetic;
mod template;

use std::sync::{Condvar, Mutex};
use std::time::Duration;

pub use backend::{fixture_key, Backend, BackendError, FixtureBackend, LiveBackend, LiveConfig};
pub use parse::{
    format_rating, parse_correction, parse_educational_score, parse_generation, parse_rating,
    strip_code_fence, Correction, Generation,
};
pub use synthetic::{CorrectionStyle, SyntheticBackend};
pub use template::{
    join_keywords, render_prompt, PromptTemplate, TemplateId, CORRECTION_BODY, CORRECTION_PREAMBLE,
    CPT_LABEL_BODY, EDUCATIONAL_SCORE_MARKER, GENERATION_TABLE_BODY, RATING_SEPARATOR,
    SFT_RATING_BODY,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_output_units: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            max_output_units: 2048,
            temperature: 0.0,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_max_output(mut self, units: u32) -> Self {
        self.max_output_units = units;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResponse {
    pub text: String,
    pub backend_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn no_wait(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_backoff: Duration::ZERO,
            max_backoff: Duration::ZERO,
        }
    }

    fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(20)).unwrap_or(u32::MAX);
        self.base_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

/// Counting semaphore with a high-water mark.
#[derive(Debug)]
struct Slots {
    state: Mutex<(usize, usize)>,
    freed: Condvar,
    limit: usize,
}

impl Slots {
    fn new(limit: usize) -> Self {
        Slots {
            state: Mutex::new((0, 0)),
            freed: Condvar::new(),
            limit: limit.max(1),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut s = self.state.lock().unwrap();
        while s.0 >= self.limit {
            s = self.freed.wait(s).unwrap();
        }
        s.0 += 1;
        s.1 = s.1.max(s.0);
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut s = self.0.state.lock().unwrap();
        s.0 -= 1;
        self.0.freed.notify_one();
    }
}

/// Shared entry point for all model calls. Safe to use from many threads.
pub struct Gateway {
    backend: Box<dyn Backend>,
    retry: RetryPolicy,
    slots: Slots,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>, retry: RetryPolicy, max_in_flight: usize) -> Self {
        Gateway {
            backend,
            retry,
            slots: Slots::new(max_in_flight),
        }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn max_in_flight(&self) -> usize {
        self.slots.limit
    }

    /// Highest number of concurrent backend calls observed so far.
    pub fn peak_in_flight(&self) -> usize {
        self.slots.state.lock().unwrap().1
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        let mut attempt = 0u32;
        loop {
            let outcome = {
                let _slot = self.slots.acquire();
                self.backend.complete(request)
            };
            attempt += 1;
            match outcome {
                Ok(text) => {
                    return Ok(CompletionResponse {
                        text,
                        backend_id: self.backend.id().to_string(),
                    })
                }
                Err(BackendError::Transient(msg)) if attempt <= self.retry.max_retries => {
                    let wait = self.retry.backoff(attempt - 1);
                    log::debug!("transient backend failure ({msg}); retry {attempt} in {wait:?}");
                    if !wait.is_zero() {
                        std::thread::sleep(wait);
                    }
                }
                Err(BackendError::Transient(message)) | Err(BackendError::Fatal(message)) => {
                    return Err(Error::Transport {
                        attempts: attempt,
                        message,
                    })
                }
            }
        }
    }
}
