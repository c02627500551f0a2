//! Stage orchestration over a run directory.
//!
//! Each stage reads its predecessor's files and writes its own. A completed
//! stage leaves a checkpoint keyed by the hash of its parameters and input
//! files; rerunning it with the same key is a no-op unless forced. The
//! long-running stages (correct, score, synth, rate) also append per-record
//! progress so an interrupted run resumes where it stopped.

mod progress;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{BackendKind, Config};
use crate::error::{Error, Result};
use crate::gateway::{FixtureBackend, Gateway, LiveBackend, SyntheticBackend};
use crate::jsonl::{hash_file, read_text, write_json};
use crate::tokenize::Tokenizer;

pub use stages::{CptLine, Stats};

/// File names inside the run directory.
pub mod files {
    pub const INGESTED: &str = "ingested.jsonl";
    pub const INGEST_INDEX: &str = "ingest_index.jsonl";
    pub const CORRECTED: &str = "corrected.jsonl";
    pub const SCORED: &str = "scored.jsonl";
    pub const SCORE_REPORT: &str = "score_report.json";
    pub const FILTERED: &str = "filtered.jsonl";
    pub const KEYWORDS_DIR: &str = "keywords";
    pub const SYNTH: &str = "synth.jsonl";
    pub const SYNTH_SUMMARY: &str = "synth_summary.json";
    pub const DEDUP: &str = "dedup.jsonl";
    pub const CLUSTERS: &str = "clusters.jsonl";
    pub const DEDUP_REPORT: &str = "dedup_report.json";
    pub const RATED: &str = "rated.jsonl";
    pub const RATING_REPORT: &str = "rating_report.json";
    pub const GATED: &str = "gated.jsonl";
    pub const GATE_DROPPED: &str = "gate_dropped.jsonl";
    pub const EXPORT_DIR: &str = "export";
    pub const CPT: &str = "export/cpt.jsonl";
    pub const SFT: &str = "export/sft.jsonl";
    pub const MANIFEST: &str = "export/manifest.json";
    pub const STATS: &str = "stats.json";
    pub const CHECKPOINTS: &str = ".checkpoints";
    pub const PROGRESS: &str = ".progress";
    pub const LOCK: &str = ".lock";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Correct,
    Score,
    Filter,
    Keywords,
    Synth,
    Dedup,
    Rate,
    Gate,
    Export,
    Stats,
    All,
}

impl Stage {
    /// What `all` runs, in order.
    pub const SEQUENCE: [Stage; 11] = [
        Stage::Ingest,
        Stage::Correct,
        Stage::Score,
        Stage::Filter,
        Stage::Keywords,
        Stage::Synth,
        Stage::Dedup,
        Stage::Rate,
        Stage::Gate,
        Stage::Export,
        Stage::Stats,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Correct => "correct",
            Stage::Score => "score",
            Stage::Filter => "filter",
            Stage::Keywords => "keywords",
            Stage::Synth => "synth",
            Stage::Dedup => "dedup",
            Stage::Rate => "rate",
            Stage::Gate => "gate",
            Stage::Export => "export",
            Stage::Stats => "stats",
            Stage::All => "all",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::SEQUENCE
            .into_iter()
            .chain([Stage::All])
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub force: bool,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    UpToDate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRun {
    pub stage: Stage,
    pub status: StageStatus,
    pub summary: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    key: String,
    outputs: BTreeMap<String, String>,
}

/// Inputs and parameters that decide a stage's output.
struct StagePlan {
    inputs: Vec<PathBuf>,
    params: serde_json::Value,
}

/// Exclusive ownership of a run directory for the life of the value.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(files::LOCK);
        for _ in 0..2 {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    use std::io::Write;
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(RunLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if !lock_is_stale(&path) {
                        return Err(Error::Locked(path));
                    }
                    log::warn!("removing stale lock {}", path.display());
                    let _ = fs::remove_file(&path);
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        Err(Error::Locked(path))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A lock whose owner process no longer exists. Only decidable where
/// `/proc` is available; elsewhere locks are never considered stale.
fn lock_is_stale(path: &Path) -> bool {
    let Ok(text) = fs::read_to_string(path) else {
        return false;
    };
    let Ok(pid) = text.trim().parse::<u32>() else {
        return false;
    };
    let proc = Path::new("/proc");
    proc.is_dir() && !proc.join(pid.to_string()).exists()
}

pub struct Pipeline {
    config: Config,
    run_dir: PathBuf,
    tokenizer: Box<dyn Tokenizer>,
    force: bool,
    pool: rayon::ThreadPool,
    gateway: OnceLock<Gateway>,
    _lock: RunLock,
}

impl Pipeline {
    pub fn open(mut config: Config, options: &RunOptions) -> Result<Self> {
        if let Some(w) = options.workers {
            config.workers = w;
        }
        if let Some(s) = options.seed {
            config.seed = s;
        }
        config.validate()?;
        let run_dir = config.run_dir();
        fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
        let lock = RunLock::acquire(&run_dir)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Pipeline {
            tokenizer: config.tokenizer()?,
            run_dir,
            config,
            force: options.force,
            pool,
            gateway: OnceLock::new(),
            _lock: lock,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }

    /// Runs one stage, or the whole sequence for [`Stage::All`].
    pub fn run(&self, stage: Stage) -> Result<Vec<StageRun>> {
        let stages: Vec<Stage> = if stage == Stage::All {
            Stage::SEQUENCE.to_vec()
        } else {
            vec![stage]
        };
        let mut out = Vec::new();
        for s in stages {
            let run = self.execute(s)?;
            log::info!("{}: {}", s, run.summary);
            out.push(run);
        }
        Ok(out)
    }

    fn execute(&self, stage: Stage) -> Result<StageRun> {
        if stage == Stage::Stats {
            let stats = self.stats()?;
            return Ok(StageRun {
                stage,
                status: StageStatus::Ran,
                summary: stats.summary(),
            });
        }
        let plan = self.plan(stage)?;
        let key = self.key(stage, &plan)?;
        if !self.force && self.up_to_date(stage, &key)? {
            return Ok(StageRun {
                stage,
                status: StageStatus::UpToDate,
                summary: "up to date".into(),
            });
        }
        if self.force {
            progress::discard(&self.run_dir, stage);
        }
        let (outputs, summary) = self.pool.install(|| self.run_stage(stage, &key))?;
        self.save_checkpoint(stage, key, &outputs)?;
        progress::discard(&self.run_dir, stage);
        Ok(StageRun {
            stage,
            status: StageStatus::Ran,
            summary,
        })
    }

    fn key(&self, stage: Stage, plan: &StagePlan) -> Result<String> {
        let mut h = Sha256::new();
        h.update(stage.as_str().as_bytes());
        h.update([0]);
        h.update(crate::model::to_canonical_line(&plan.params).as_bytes());
        for input in &plan.inputs {
            h.update([0]);
            h.update(self.display_name(input).as_bytes());
            h.update([0]);
            h.update(hash_file(input)?.as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Run-relative name for files inside the run directory, the path
    /// itself otherwise.
    fn display_name(&self, p: &Path) -> String {
        p.strip_prefix(&self.run_dir).unwrap_or(p).to_string_lossy().into_owned()
    }

    fn checkpoint_path(&self, stage: Stage) -> PathBuf {
        self.run_dir.join(files::CHECKPOINTS).join(format!("{stage}.json"))
    }

    fn up_to_date(&self, stage: Stage, key: &str) -> Result<bool> {
        let path = self.checkpoint_path(stage);
        if !path.exists() {
            return Ok(false);
        }
        let Ok(cp) = serde_json::from_str::<Checkpoint>(&read_text(&path)?) else {
            log::warn!("ignoring unreadable checkpoint {}", path.display());
            return Ok(false);
        };
        if cp.key != key {
            return Ok(false);
        }
        for (name, hash) in &cp.outputs {
            match hash_file(&self.run_dir.join(name)) {
                Ok(h) if &h == hash => {}
                _ => return Ok(false),
            }
        }
        Ok(true)
    }

    fn save_checkpoint(&self, stage: Stage, key: String, outputs: &[PathBuf]) -> Result<()> {
        let mut map = BTreeMap::new();
        for o in outputs {
            map.insert(self.display_name(o), hash_file(o)?);
        }
        write_json(&self.checkpoint_path(stage), &Checkpoint { key, outputs: map })
    }

    fn gateway(&self) -> Result<&Gateway> {
        if let Some(g) = self.gateway.get() {
            return Ok(g);
        }
        let g = self.build_gateway()?;
        Ok(self.gateway.get_or_init(|| g))
    }

    fn build_gateway(&self) -> Result<Gateway> {
        let b = &self.config.backend;
        let backend: Box<dyn crate::gateway::Backend> = match b.kind {
            BackendKind::Mock => {
                let synthetic = SyntheticBackend::new(b.mock_seed).with_correction(b.correction_style()?);
                match &b.fixtures {
                    Some(path) => Box::new(FixtureBackend::load(&self.config.resolve(path))?.with_fallback(Box::new(synthetic))),
                    None => Box::new(synthetic),
                }
            }
            BackendKind::Live => {
                let live = b.live.as_ref().ok_or_else(|| Error::Config("missing [backend.live]".into()))?;
                Box::new(LiveBackend::new(live.to_live_config())?)
            }
        };
        Ok(Gateway::new(
            backend,
            self.config.gateway.retry_policy(),
            self.config.gateway.max_in_flight,
        ))
    }
}
