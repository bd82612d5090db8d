use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use schrodinger_map::cli::{run, Command, Overrides};

#[derive(Parser)]
#[command(version, about = "Entropic multi-marginal transport experiments")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the Schrödinger system for configured marginals.
    Solve(Flags),
    /// Probe potentials and energies along displacement paths.
    Stability(Flags),
    /// Run a Wasserstein gradient flow.
    Flow(Flags),
    /// Aggregate run summaries into one CSV table.
    Report(Flags),
}

#[derive(clap::Args)]
struct Flags {
    /// JSON experiment config (report: optional).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (report: directory to scan).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the Sinkhorn tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (command, flags) = match args.command {
        Cmd::Solve(f) => (Command::Solve, f),
        Cmd::Stability(f) => (Command::Stability, f),
        Cmd::Flow(f) => (Command::Flow, f),
        Cmd::Report(f) => (Command::Report, f),
    };
    let overrides = Overrides {
        seed: flags.seed,
        out: flags.out,
        tol: flags.tol,
    };
    match run(command, flags.config.as_deref(), &overrides) {
        Ok(outcome) if outcome.failures.is_empty() => ExitCode::SUCCESS,
        Ok(outcome) => {
            for f in &outcome.failures {
                eprintln!("FAILED {}: measured {:e}, ceiling {:e}", f.invariant, f.measured, f.ceiling);
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
