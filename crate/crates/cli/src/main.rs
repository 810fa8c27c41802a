use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use halpern_cli::{certify, compare, simulate, verify, Invocation};

/// Certified Halpern iteration experiments.
#[derive(Parser)]
#[command(name = "halpern", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute certified indices for every eps.
    Certify(Common),
    /// Run an iteration; write the trajectory CSV and a summary.
    Simulate(Common),
    /// Compare certified indices against a simulated run.
    Compare(Common),
    /// Run every property check.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl From<Common> for Invocation {
    fn from(c: Common) -> Self {
        Invocation { config: c.config, out: c.out, seed: c.seed }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, run): (&str, fn(&Invocation) -> _) = match &cli.command {
        Command::Certify(_) => ("certify", certify),
        Command::Simulate(_) => ("simulate", simulate),
        Command::Compare(_) => ("compare", compare),
        Command::Verify(_) => ("verify", verify),
    };
    let inv = match cli.command {
        Command::Certify(c) | Command::Simulate(c) | Command::Compare(c) | Command::Verify(c) => Invocation::from(c),
    };
    match run(&inv) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if !outcome.passed {
                eprintln!("{name}: checks failed");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("{name}: {e}");
            ExitCode::from(1)
        }
    }
}
