//! Command-line driver: invariant suite, Rayleigh demo and the decoupling
//! benchmark.

pub mod commands;
pub mod config;
pub mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_decouple, cmd_rayleigh, cmd_verify, DecoupleArgs, RayleighArgs, VerifyArgs};
pub use error::{CliError, CliResult, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE, EXIT_VERIFY};

const EXIT_HELP: &str = "Exit status: 0 success, 1 verification failure, 2 usage or config error, 3 divergence.";

#[derive(Debug, Parser)]
#[command(name = "orthodc", version, about = "Stiefel optimization checks and feature decoupling experiments", after_help = EXIT_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the manifold, optimizer and gradient invariant suite.
    #[command(after_help = verify_help())]
    Verify(VerifyCli),
    /// Minimize -tr(Θ^T A Θ) over the Stiefel manifold.
    #[command(after_help = rayleigh_help())]
    Rayleigh(RayleighCli),
    /// Train the ablation arms on synthetic hazy/clear features.
    #[command(after_help = decouple_help())]
    Decouple(DecoupleCli),
}

fn key_help(keys: &[config::KeySpec]) -> String {
    format!(
        "Config keys (flat `key = value`, # comments):\n{}\n\n{EXIT_HELP}",
        config::describe(keys)
    )
}

fn verify_help() -> String {
    key_help(config::VERIFY_KEYS)
}

fn rayleigh_help() -> String {
    key_help(config::RAYLEIGH_KEYS)
}

fn decouple_help() -> String {
    key_help(config::DECOUPLE_KEYS)
}

#[derive(Debug, Args)]
pub struct VerifyCli {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cases: Option<usize>,
    #[arg(long)]
    pub grad_cases: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RayleighCli {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(short, long)]
    pub n: Option<usize>,
    #[arg(short, long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_parser = ["rsgd", "radam"])]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Diagonal of A, comma separated (e.g. 5,3,1).
    #[arg(long)]
    pub diag: Option<String>,
}

#[derive(Debug, Args)]
pub struct DecoupleCli {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "decouple_out")]
    pub out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Comma separated subset of omlp,penalty,unconstrained.
    #[arg(long)]
    pub arms: Option<String>,
    #[arg(long, value_parser = ["rsgd", "radam"])]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Runs a parsed command line, returning the process exit status.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Verify(a) => cmd_verify(
            &VerifyArgs {
                config: a.config,
                seed: a.seed,
                cases: a.cases,
                grad_cases: a.grad_cases,
            },
            out,
        )
        .map(|_| ()),
        Command::Rayleigh(a) => cmd_rayleigh(
            &RayleighArgs {
                config: a.config,
                n: a.n,
                p: a.p,
                steps: a.steps,
                gamma: a.gamma,
                optimizer: a.optimizer,
                seed: a.seed,
                tol: a.tol,
                diag: a.diag,
            },
            out,
        )
        .map(|_| ()),
        Command::Decouple(a) => cmd_decouple(
            &DecoupleArgs {
                config: a.config,
                out: a.out,
                force: a.force,
                arms: a.arms,
                optimizer: a.optimizer,
                seed: a.seed,
            },
            out,
        )
        .map(|_| ()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
