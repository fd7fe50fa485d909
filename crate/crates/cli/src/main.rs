use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use sentipipe::experiment::{self, ExperimentConfig, Outcome};

/// Sentiment experiments: data statistics, normalization, reformulation,
/// training, evaluation and comparison with published scores.
#[derive(Debug, Parser)]
#[command(name = "sentipipe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; overrides `[train] seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print sizes and class shares of the data files.
    Stats(Common),
    /// Write normalized copies of the data files.
    Normalize(Common),
    /// Write the model inputs built from the data files.
    Reformulate(Common),
    /// Train and evaluate (grid search first when configured).
    Train(Common),
    /// Score a prediction file or a checkpoint on the test file.
    Evaluate(Common),
    /// Grid search on a held-out part of the training file.
    Grid(Common),
    /// Per-example table for several models on a difficult set.
    Difficult(Common),
    /// Compare a metrics report with published scores.
    Compare(Common),
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let (common, action): (&Common, fn(&ExperimentConfig) -> sentipipe::Result<Outcome>) = match &cli.command {
        Command::Stats(c) => (c, experiment::run_stats),
        Command::Normalize(c) => (c, experiment::run_normalize),
        Command::Reformulate(c) => (c, experiment::run_reformulate),
        Command::Train(c) => (c, experiment::run_train),
        Command::Evaluate(c) => (c, experiment::run_evaluate),
        Command::Grid(c) => (c, experiment::run_grid),
        Command::Difficult(c) => (c, experiment::run_difficult),
        Command::Compare(c) => (c, experiment::run_compare),
    };
    let mut cfg = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(out) = &common.out {
        cfg.set_output_dir(out)?;
    }
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(action(&cfg)?)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<sentipipe::Error>() {
        Some(e) if e.is_input_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            if let Some(dir) = outcome.out_dir {
                eprintln!("wrote {}", dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
