//! `mmembed`: train, encode, evaluate and audit from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod audit;
mod encode;
mod eval;
mod output;
mod train;

use mmembed_core::dataio::config::DEFAULT_SEED;
use mmembed_core::dataio::{load_config, EngineConfig};

#[derive(Debug, Parser)]
#[command(
    name = "mmembed",
    version,
    about = "Contrastive embedding training and retrieval evaluation"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML engine config; every key is optional
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for all randomness [default: config seed, else 20250101]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output format [default: table on a terminal, json otherwise]
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Cap on worker threads
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the encoder and write a checkpoint plus a loss trace
    Train(train::TrainArgs),
    /// Encode feature rows into a UEMB embedding file
    Encode(encode::EncodeArgs),
    /// Evaluate tasks listed in a manifest and emit a report
    Eval(eval::EvalArgs),
    /// Re-render a stored report
    Report(eval::ReportArgs),
    /// Draw sub-batches and report per-source frequencies
    SampleAudit(audit::AuditArgs),
    /// Run built-in gradient and oracle checks
    Selftest,
}

/// Config from `--config` (or defaults) with `--seed` applied.
fn engine_config(global: &GlobalArgs) -> anyhow::Result<EngineConfig> {
    let mut cfg = match &global.config {
        Some(path) => load_config(path)?,
        None => EngineConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn selftest(global: &GlobalArgs) -> anyhow::Result<bool> {
    let results = mmembed_core::selftest::run_selftest(global.seed.unwrap_or(DEFAULT_SEED))?;
    let mut ok = true;
    for r in &results {
        println!(
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        ok &= r.passed;
    }
    Ok(ok)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            anyhow::bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Train(args) => train::run(&cli.global, args).map(|()| true),
        Command::Encode(args) => encode::run(&cli.global, args).map(|()| true),
        Command::Eval(args) => eval::run_eval(&cli.global, args),
        Command::Report(args) => eval::run_report(&cli.global, args).map(|()| true),
        Command::SampleAudit(args) => audit::run(&cli.global, args),
        Command::Selftest => selftest(&cli.global),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
