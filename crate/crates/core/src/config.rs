//! Run configuration: one TOML file with a section per stage.
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::correction::CorrectionPolicy;
use crate::dedup::{DedupMode, DedupPolicy, GroupBy, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::gateway::{CorrectionStyle, LiveConfig, RetryPolicy};
use crate::keywords::default_stopwords;
use crate::model::Source;
use crate::quality::{ScoreSourceKind, DEFAULT_DROP_FRACTION};
use crate::rating::DEFAULT_MIN_AVERAGE;
use crate::synthesis::{PlanEntry, SynthPolicy};
use crate::tokenize::{self, Tokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub run_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_tokenizer")]
    pub tokenizer: String,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub gateway: GatewaySection,
    #[serde(default)]
    pub ingest: IngestSection,
    #[serde(default)]
    pub correct: CorrectSection,
    #[serde(default)]
    pub score: ScoreSection,
    #[serde(default)]
    pub keywords: KeywordsSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub dedup: DedupSection,
    #[serde(default)]
    pub rate: RateSection,
    #[serde(default)]
    pub export: ExportSection,
    /// Directory of the config file; not part of the file itself.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_workers() -> usize {
    4
}

fn default_tokenizer() -> String {
    "approx".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default)]
    pub kind: BackendKind,
    /// Mock: seed of the synthetic generator.
    #[serde(default)]
    pub mock_seed: u64,
    #[serde(default = "default_style")]
    pub correction_style: String,
    /// Mock: prompt-hash fixtures consulted before the generator.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default)]
    pub live: Option<LiveSection>,
}

fn default_style() -> String {
    "reflow".into()
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: BackendKind::Mock,
            mock_seed: 0,
            correction_style: default_style(),
            fixtures: None,
            live: None,
        }
    }
}

impl BackendSection {
    pub fn correction_style(&self) -> Result<CorrectionStyle> {
        match self.correction_style.as_str() {
            "echo" => Ok(CorrectionStyle::Echo),
            "reflow" => Ok(CorrectionStyle::Reflow),
            other => Err(Error::Config(format!("backend.correction_style: unknown style `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveSection {
    pub url: String,
    pub model: String,
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl LiveSection {
    pub fn to_live_config(&self) -> LiveConfig {
        LiveConfig {
            url: self.url.clone(),
            model: self.model.clone(),
            api_key_env: self.api_key_env.clone(),
            timeout: Duration::from_secs(self.timeout_secs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewaySection {
    pub max_retries: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for GatewaySection {
    fn default() -> Self {
        let r = RetryPolicy::default();
        GatewaySection {
            max_retries: r.max_retries,
            base_backoff_ms: r.base_backoff.as_millis() as u64,
            max_backoff_ms: r.max_backoff.as_millis() as u64,
            max_in_flight: 8,
        }
    }
}

impl GatewaySection {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_backoff: Duration::from_millis(self.base_backoff_ms),
            max_backoff: Duration::from_millis(self.max_backoff_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    #[serde(default)]
    pub inputs: Vec<IngestInput>,
}

/// A directory of documents from one source and domain. Without an extract
/// command every `*.txt` file is one document; with one, every file with
/// `extension` is passed through the command and its stdout is the text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestInput {
    pub path: PathBuf,
    pub source: Source,
    pub domain: String,
    /// Program and arguments; `{input}` is replaced by the file path.
    #[serde(default)]
    pub extract_command: Option<Vec<String>>,
    #[serde(default = "default_extension")]
    pub extension: String,
}

fn default_extension() -> String {
    "txt".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrectSection {
    pub max_chunk_tokens: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl Default for CorrectSection {
    fn default() -> Self {
        let p = CorrectionPolicy::default();
        CorrectSection {
            max_chunk_tokens: p.max_chunk_tokens,
            min_ratio: p.min_ratio,
            max_ratio: p.max_ratio,
        }
    }
}

impl CorrectSection {
    pub fn policy(&self) -> CorrectionPolicy {
        CorrectionPolicy {
            max_chunk_tokens: self.max_chunk_tokens,
            min_ratio: self.min_ratio,
            max_ratio: self.max_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreSection {
    pub source: ScoreSourceKind,
    pub external_file: Option<PathBuf>,
    pub drop_fraction: f64,
}

impl Default for ScoreSection {
    fn default() -> Self {
        ScoreSection {
            source: ScoreSourceKind::LlmLabeler,
            external_file: None,
            drop_fraction: DEFAULT_DROP_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeywordsSection {
    pub k: usize,
    pub temperature: f64,
    pub stopwords: Option<BTreeSet<String>>,
    pub domains: Vec<DomainSource>,
}

impl Default for KeywordsSection {
    fn default() -> Self {
        let p = SynthPolicy::default();
        KeywordsSection {
            k: p.k,
            temperature: p.temperature,
            stopwords: None,
            domains: Vec::new(),
        }
    }
}

impl KeywordsSection {
    pub fn stopwords(&self) -> BTreeSet<String> {
        self.stopwords.clone().unwrap_or_else(default_stopwords)
    }
}

/// Keyword source for one domain: reference texts to count, or a ready
/// table file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSource {
    pub name: String,
    #[serde(default)]
    pub reference_dir: Option<PathBuf>,
    #[serde(default)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub registry: Option<PathBuf>,
    pub min_coverage: f64,
    pub max_attempts: u32,
    pub plan: Vec<PlanEntry>,
}

impl Default for SynthSection {
    fn default() -> Self {
        let p = SynthPolicy::default();
        SynthSection {
            registry: None,
            min_coverage: p.min_coverage,
            max_attempts: p.max_attempts,
            plan: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupModeKind {
    #[default]
    FixedThreshold,
    TargetFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DedupSection {
    pub mode: DedupModeKind,
    pub threshold: f64,
    pub target_fraction: f64,
    pub group_by: GroupBy,
    pub prefilter: bool,
}

impl Default for DedupSection {
    fn default() -> Self {
        DedupSection {
            mode: DedupModeKind::FixedThreshold,
            threshold: DEFAULT_THRESHOLD,
            target_fraction: 0.075,
            group_by: GroupBy::TaskType,
            prefilter: true,
        }
    }
}

impl DedupSection {
    pub fn policy(&self) -> DedupPolicy {
        DedupPolicy {
            mode: match self.mode {
                DedupModeKind::FixedThreshold => DedupMode::FixedThreshold(self.threshold),
                DedupModeKind::TargetFraction => DedupMode::TargetFraction(self.target_fraction),
            },
            group_by: self.group_by,
            prefilter: self.prefilter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSection {
    pub min_average: f64,
    pub parse_retries: u32,
}

impl Default for RateSection {
    fn default() -> Self {
        RateSection {
            min_average: DEFAULT_MIN_AVERAGE,
            parse_retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSection {
    /// Source name of the instruction set in the manifest.
    pub sft_source: String,
    /// Epochs per source name, copied into the manifest verbatim.
    pub epochs: BTreeMap<String, u32>,
}

impl Default for ExportSection {
    fn default() -> Self {
        ExportSection {
            sft_source: "sft".into(),
            epochs: BTreeMap::new(),
        }
    }
}

impl Config {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.base_dir = base_dir.to_path_buf();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Config::parse(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.resolve(&self.run_dir)
    }

    pub fn tokenizer(&self) -> Result<Box<dyn Tokenizer>> {
        tokenize::by_name(&self.tokenizer)
            .ok_or_else(|| Error::Config(format!("tokenizer: unknown tokenizer `{}`", self.tokenizer)))
    }

    pub fn synth_policy(&self) -> SynthPolicy {
        SynthPolicy {
            k: self.keywords.k,
            temperature: self.keywords.temperature,
            min_coverage: self.synth.min_coverage,
            max_attempts: self.synth.max_attempts,
        }
    }

    /// Checks every section; policy violations surface as config errors so a
    /// bad file fails before any stage runs.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Policy(m) => Error::Config(m),
            other => other,
        };
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.gateway.max_in_flight == 0 {
            return Err(Error::Config("gateway.max_in_flight must be at least 1".into()));
        }
        self.tokenizer()?;
        self.backend.correction_style()?;
        if self.backend.kind == BackendKind::Live && self.backend.live.is_none() {
            return Err(Error::Config("backend.kind = \"live\" needs a [backend.live] section".into()));
        }
        self.correct.policy().validate().map_err(cfg)?;
        if !(0.0..1.0).contains(&self.score.drop_fraction) {
            return Err(Error::Config(format!(
                "score.drop_fraction must be in [0, 1), got {}",
                self.score.drop_fraction
            )));
        }
        if self.score.source == ScoreSourceKind::ExternalFile && self.score.external_file.is_none() {
            return Err(Error::Config("score.source = \"external_file\" needs score.external_file".into()));
        }
        self.synth_policy().validate().map_err(cfg)?;
        self.dedup.policy().validate().map_err(cfg)?;
        if !self.rate.min_average.is_finite() {
            return Err(Error::Config("rate.min_average must be finite".into()));
        }
        let mut names = BTreeSet::new();
        for d in &self.keywords.domains {
            if !names.insert(d.name.as_str()) {
                return Err(Error::Config(format!("keywords.domains lists `{}` twice", d.name)));
            }
            if d.reference_dir.is_some() == d.table.is_some() {
                return Err(Error::Config(format!(
                    "keywords domain `{}` needs exactly one of reference_dir and table",
                    d.name
                )));
            }
        }
        Ok(())
    }
}
