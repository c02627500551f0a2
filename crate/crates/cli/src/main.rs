use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use curate::config::Config;
use curate::pipeline::{files, Pipeline, RunOptions, Stage, StageStatus};
use curate::synthesis::TaskRegistry;

/// Curates a continual-pretraining corpus and a synthetic instruction set.
#[derive(Debug, Parser)]
#[command(name = "curate", version)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, short, global = true, default_value = "curate.toml")]
    config: PathBuf,
    /// Rerun stages even when their checkpoint is current.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read input text files into document records.
    Ingest,
    /// Repair extraction noise chunk by chunk.
    Correct,
    /// Attach educational-value scores.
    Score,
    /// Drop the lowest-scoring fraction of documents.
    Filter,
    /// Build per-domain keyword tables.
    Keywords {
        /// Copy the built tables into this directory afterwards.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Generate instruction records from the plan.
    Synth,
    /// Remove near-duplicate instructions.
    Dedup,
    /// Rate instructions on five aspects.
    Rate,
    /// Drop instructions rated below the minimum average.
    Gate,
    /// Write the CPT and SFT sets and the manifest.
    Export,
    /// Recount every artifact and write stats.json.
    Stats,
    /// Run every stage in order.
    All,
    /// Print the built-in task registry as TOML, a starting point for
    /// `synth.registry`.
    Tasks,
}

impl Command {
    fn stage(&self) -> Stage {
        match self {
            Command::Ingest => Stage::Ingest,
            Command::Correct => Stage::Correct,
            Command::Score => Stage::Score,
            Command::Filter => Stage::Filter,
            Command::Keywords { .. } => Stage::Keywords,
            Command::Synth => Stage::Synth,
            Command::Dedup => Stage::Dedup,
            Command::Rate => Stage::Rate,
            Command::Gate => Stage::Gate,
            Command::Export => Stage::Export,
            Command::Stats => Stage::Stats,
            Command::All | Command::Tasks => Stage::All,
        }
    }
}

fn export_tables(pipeline: &Pipeline, out: &Path) -> Result<usize> {
    let dir = pipeline.path(files::KEYWORDS_DIR);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut n = 0;
    for entry in fs::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|x| x == "tsv") {
            let target = out.join(path.file_name().unwrap());
            fs::copy(&path, &target).with_context(|| format!("copying to {}", target.display()))?;
            n += 1;
        }
    }
    Ok(n)
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Tasks = cli.command {
        print!("{}", TaskRegistry::builtin().to_toml());
        return Ok(());
    }
    let config = Config::load(&cli.config)?;
    let options = RunOptions {
        force: cli.force,
        workers: cli.workers,
        seed: cli.seed,
    };
    let pipeline = Pipeline::open(config, &options)?;
    for r in pipeline.run(cli.command.stage())? {
        let status = match r.status {
            StageStatus::Ran => "done",
            StageStatus::UpToDate => "skipped",
        };
        println!("{:<8} {status:<7} {}", r.stage.as_str(), r.summary);
    }
    if let Command::Keywords { export: Some(out) } = &cli.command {
        let n = export_tables(&pipeline, out)?;
        println!("exported {n} table(s) to {}", out.display());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<curate::Error>())
        .map_or(2, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
