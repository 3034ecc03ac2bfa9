use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use dnflow::cli::{self, Command, Invocation};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    /// Fixed number of steps; writes diagnostics.csv and snapshots.
    Evolve,
    /// Runs to the stopping rule; prints `lambda mu profile_gap`.
    Eigen,
    /// Direct ground-state computation; prints `lambda mu residual iterations`.
    Oracle,
    /// Invariant suite; exit 0 iff every row passes.
    Verify,
    /// One eigen run per value of `--param`, concurrently; writes sweep.csv.
    Sweep,
}

/// Doubly nonlinear flows and p-Laplacian ground states.
#[derive(Debug, Parser)]
#[command(name = "dnflow", version)]
struct Args {
    command: Cmd,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Configuration key to sweep.
    #[arg(long)]
    param: Option<String>,
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    /// Concurrent sweep runs (default: available parallelism).
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::Evolve => Command::Evolve,
        Cmd::Eigen => Command::Eigen,
        Cmd::Oracle => Command::Oracle,
        Cmd::Verify => Command::Verify,
        Cmd::Sweep => Command::Sweep,
    };
    let inv = Invocation {
        config: args.config,
        out: args.out,
        param: args.param,
        values: args.values,
        jobs: args.jobs,
    };
    let mut stdout = std::io::stdout().lock();
    match cli::run(command, &inv, &mut stdout) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("dnflow: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
