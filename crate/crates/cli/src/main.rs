//! `mirrorlm`: prepare corpora, train tokenizers and models in either
//! reading direction, score forced-choice benchmarks, and analyse results.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::FileConfig;

/// Exit status for bad input data or arguments caught after parsing.
pub const EXIT_VALIDATION: u8 = 3;
/// Exit status for I/O and numerical failures.
pub const EXIT_RUNTIME: u8 = 4;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl From<mirrorlm::Error> for Failure {
    fn from(e: mirrorlm::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mirrorlm", version, about = "Forward and backward language-model experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML (or .json) config file; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for splitting, shuffling and initialization.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; each command writes into `<out>/<name>`.
    #[arg(long, global = true, env = "MIRRORLM_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a corpus and optionally write its character-reversed twin.
    Prepare(commands::PrepareArgs),
    /// Train a byte-level BPE tokenizer on a prepared corpus.
    TrainTokenizer(commands::TrainTokenizerArgs),
    /// Train a model, writing a checkpoint per epoch.
    Train(commands::TrainArgs),
    /// Score a forced-choice benchmark with a checkpoint.
    Eval(commands::EvalArgs),
    /// Difficulty correlations, t-tests and the direction x size ANOVA.
    Stats(commands::StatsArgs),
    /// SVG charts with CSV tables.
    Report(commands::ReportArgs),
    /// Generate a synthetic corpus, benchmark and human responses.
    Synth(commands::SynthArgs),
}

/// Settings shared by every command after merging config and flags.
pub struct Context {
    pub file: FileConfig,
    pub seed: u64,
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let file = match &cli.global.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Context {
        seed: cli.global.seed.or(file.seed).unwrap_or(0),
        out: cli
            .global
            .out
            .clone()
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| PathBuf::from("runs")),
        file,
    };
    match cli.command {
        Command::Prepare(a) => commands::prepare(&ctx, a),
        Command::TrainTokenizer(a) => commands::train_tokenizer(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Stats(a) => commands::stats(&ctx, a),
        Command::Report(a) => commands::report(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, kind, msg) = match f {
                Failure::Usage(m) => (2, "usage", m),
                Failure::Validation(m) => (EXIT_VALIDATION, "invalid input", m),
                Failure::Runtime(m) => (EXIT_RUNTIME, "failed", m),
            };
            eprintln!("mirrorlm: {kind}: {msg}");
            ExitCode::from(code)
        }
    }
}
