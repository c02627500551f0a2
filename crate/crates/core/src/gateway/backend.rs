use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::CompletionRequest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: timeouts, 429, 5xx.
    Transient(String),
    Fatal(String),
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError>;
}

/// Hex SHA-256 of the prompt text; the lookup key of fixture files.
pub fn fixture_key(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureLine {
    #[serde(default)]
    prompt_sha256: Option<String>,
    #[serde(default)]
    prompt: Option<String>,
    response: String,
}

/// Replays canned responses keyed by prompt hash, optionally delegating
/// unknown prompts to another backend.
pub struct FixtureBackend {
    responses: HashMap<String, String>,
    fallback: Option<Box<dyn Backend>>,
    id: String,
}

impl FixtureBackend {
    pub fn new(responses: HashMap<String, String>) -> Self {
        FixtureBackend {
            responses,
            fallback: None,
            id: "mock-fixtures".into(),
        }
    }

    pub fn with_fallback(mut self, fallback: Box<dyn Backend>) -> Self {
        self.id = format!("mock-fixtures+{}", fallback.id());
        self.fallback = Some(fallback);
        self
    }

    pub fn insert(&mut self, prompt: &str, response: impl Into<String>) {
        self.responses.insert(fixture_key(prompt), response.into());
    }

    /// Fixture JSONL: one `{"prompt_sha256" | "prompt", "response"}` per line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut responses = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureLine = crate::model::parse_object(line, &["response"])
                .map_err(|e| e.in_stage("fixtures", format!("line {}", n + 1)))?;
            let key = match (entry.prompt_sha256, entry.prompt) {
                (Some(h), _) => h.to_ascii_lowercase(),
                (None, Some(p)) => fixture_key(&p),
                (None, None) => {
                    return Err(Error::schema("prompt_sha256", "fixture needs a prompt or its hash")
                        .in_stage("fixtures", format!("line {}", n + 1)))
                }
            };
            responses.insert(key, entry.response);
        }
        Ok(FixtureBackend::new(responses))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Backend for FixtureBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError> {
        if let Some(r) = self.responses.get(&fixture_key(&request.prompt)) {
            return Ok(r.clone());
        }
        match &self.fallback {
            Some(f) => f.complete(request),
            None => Err(BackendError::Fatal(format!(
                "no fixture for prompt {}",
                fixture_key(&request.prompt)
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    /// Full chat-completions URL.
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout: Duration,
}

/// Chat-completion style HTTP JSON backend.
pub struct LiveBackend {
    config: LiveConfig,
    api_key: String,
    agent: ureq::Agent,
    id: String,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| {
                Error::Config(format!(
                    "live backend needs a credential in ${}",
                    config.api_key_env
                ))
            })?;
        if config.url.is_empty() {
            return Err(Error::Config("live backend url is empty".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(LiveBackend {
            id: format!("live:{}", config.model),
            config,
            api_key,
            agent,
        })
    }
}

impl Backend for LiveBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError> {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_output_units,
            "temperature": request.temperature,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let mut resp = self
            .agent
            .post(&self.config.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Fatal(format!("HTTP {status}: {detail}")));
        }
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Transient(format!("bad response body: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal("response lacks choices[0].message.content".into()))
    }
}
