use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use edwards::diagnostics::DriftSign;
use edwards::error::Error;
use edwards_cli::commands;

/// Sampler for weakly self-avoiding fractional polymers: runs the
/// quantization dynamics, builds importance-sampling oracles, verifies the
/// structural identities of the target measure, and exports polymer paths.
#[derive(Parser)]
#[command(name = "edwards", version, about)]
struct Cli {
    /// Suppress progress and report output (exit codes only).
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run chains of the configured stepper and persist records.
    Quantize {
        /// JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the configured number of parallel chains.
        #[arg(long = "chains")]
        chains: Option<usize>,
    },
    /// Build the importance-sampling ensemble and write its summary.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the diagnostic suite on a chain record against an oracle
    /// summary. Exit code 0 iff every diagnostic passes.
    Verify {
        /// Chain record JSON (from `quantize`).
        #[arg(long)]
        chain: PathBuf,
        /// Oracle summary JSON (from `oracle`).
        #[arg(long)]
        oracle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Self-test hook: negate the drift inside the integration-by-parts
        /// residual; a healthy build must then fail.
        #[arg(long, hide = true)]
        flip_drift_sign: bool,
    },
    /// Export polymer paths of recorded snapshots as CSV.
    Paths {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated snapshot indices (default: all).
        #[arg(long)]
        snapshots: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Quantize { config, out, resume, chains } => {
            commands::cmd_quantize(&config, &out, resume.as_deref(), chains, cli.quiet)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { config, out } => {
            commands::cmd_oracle(&config, &out, cli.quiet)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { chain, oracle, out, flip_drift_sign } => {
            let sign = if flip_drift_sign {
                DriftSign::Flipped
            } else {
                DriftSign::Standard
            };
            let reports = commands::cmd_verify(&chain, &oracle, &out, sign, cli.quiet)?;
            Ok(ExitCode::from(commands::exit_code_for(&reports) as u8))
        }
        Command::Paths { chain, out, snapshots } => {
            let parsed = match snapshots {
                Some(text) => Some(
                    text.split(',')
                        .map(|s| {
                            s.trim().parse::<usize>().map_err(|e| {
                                Error::Config(format!("bad snapshot index {s:?}: {e}"))
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                ),
                None => None,
            };
            commands::cmd_paths(&chain, &out, parsed)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
