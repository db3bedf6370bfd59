//! Command-line front end: dataset generation, pair scoring, discovery
//! runs, and result aggregation, each driven by flags or a JSON config
//! with flags taking precedence.

mod discover;
mod eval;
mod score;
mod synth;
mod util;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "pairscout",
    version,
    about = "Perturbation-pair interaction scoring and adaptive discovery",
    after_help = "Worker-pool width follows RAYON_NUM_THREADS; log verbosity follows RUST_LOG \
                  (default info). Outputs are written atomically and re-runs with the same \
                  config and seed are byte-identical."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset or reward matrix
    Synth(synth::SynthArgs),
    /// Score perturbation pairs of a dataset
    Score(score::ScoreArgs),
    /// Run the adaptive discovery loop against a known score matrix
    Discover(discover::DiscoverArgs),
    /// Aggregate discovery runs or join scores with embedding alignment
    Eval(eval::EvalArgs),
}

/// Exit codes: 2 config error, 3 data error, 4 numeric failure.
fn exit_code(e: &pairscout::Error) -> u8 {
    use pairscout::Error;
    match e {
        Error::InvalidArg(_) => 2,
        Error::Io { .. } | Error::Parse { .. } | Error::Validation(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => synth::run(args),
        Command::Score(args) => score::run(args),
        Command::Discover(args) => discover::run(args),
        Command::Eval(args) => eval::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
