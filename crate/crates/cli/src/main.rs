//! `curate` — influence-weighted instruction-data curation pipeline.
//!
//! Exit codes: 0 success, 2 config error, 3 backend error, 4 missing
//! upstream artifact.

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stages::{Stage, ALL_STAGES};

#[derive(Parser)]
#[command(
    name = "curate",
    version,
    about = "Score instruction data by in-context influence and select a diverse coreset"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Print the execution plan without running anything.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full stage graph.
    Run(StageArgs),
    /// Load and validate the corpus; write the normalized copy.
    Ingest(StageArgs),
    /// Embed every sample and build the vector index.
    Embed(StageArgs),
    /// Build per-candidate probe sets (kNN, clustering, complexity argmax).
    Probes(StageArgs),
    /// Compute per-candidate weighted in-context influence.
    Score(StageArgs),
    /// Greedy diversity-constrained coreset selection.
    Select(StageArgs),
    /// Difficulty-vs-influence consistency analysis.
    Analyze(StageArgs),
    /// Pairwise LLM-judge evaluation over answer files.
    Judge(StageArgs),
    /// Human-readable run summary.
    Report(StageArgs),
}

impl Command {
    fn stages(&self) -> Vec<Stage> {
        match self {
            Command::Run(_) => ALL_STAGES.to_vec(),
            Command::Ingest(_) => vec![Stage::Ingest],
            Command::Embed(_) => vec![Stage::Embed],
            Command::Probes(_) => vec![Stage::Probes],
            Command::Score(_) => vec![Stage::Score],
            Command::Select(_) => vec![Stage::Select],
            Command::Analyze(_) => vec![Stage::Analyze],
            Command::Judge(_) => vec![Stage::Judge],
            Command::Report(_) => vec![Stage::Report],
        }
    }

    fn args(&self) -> &StageArgs {
        match self {
            Command::Run(a)
            | Command::Ingest(a)
            | Command::Embed(a)
            | Command::Probes(a)
            | Command::Score(a)
            | Command::Select(a)
            | Command::Analyze(a)
            | Command::Judge(a)
            | Command::Report(a) => a,
        }
    }
}

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_MISSING_ARTIFACT: u8 = 4;

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<curate_core::Error>() {
            if core.is_backend() {
                return EXIT_BACKEND;
            }
        }
    }
    let msg = format!("{err:#}");
    if msg.contains("missing artifact") {
        return EXIT_MISSING_ARTIFACT;
    }
    if msg.contains("config") || msg.contains("budget") || msg.contains("tau") {
        return EXIT_CONFIG;
    }
    1
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let args = cli.command.args();
    let cfg = config::load_config(&args.config).map_err(|e| e.context("config error"))?;
    let mut runner = stages::Runner::new(cfg)?;
    let summary = runner.run(&cli.command.stages(), args.dry_run)?;
    if !args.dry_run {
        for (name, s) in &summary.stages {
            eprintln!(
                "{name}: {}",
                if s.executed { "ran" } else { s.reason.as_str() }
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
