use std::path::PathBuf;
use std::process::ExitCode;

use abreu::runner::{exit_code, run, Command, RunOptions};
use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    /// Single solve at fixed penalty (or the general-div / Allen-Cahn modes).
    Solve,
    /// Epsilon continuation against the constrained minimizer.
    Continue,
    /// Constrained minimizer and its random feasible-point audit.
    Oracle,
    /// Continuation plus the solver-versus-oracle table.
    Compare,
    /// Assumption report and boundary diagnostics of a field dump.
    Diagnose,
    /// Closed-form checks of every component.
    Selftest,
}

#[derive(Debug, Parser)]
#[command(name = "abreu", version, about = "Singular Abreu equations and convexity-constrained minimization on 2D grids")]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Nodes per axis, overriding grid.n.
    #[arg(long)]
    grid: Option<usize>,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Field dump for `diagnose` (defaults to phi).
    #[arg(long)]
    field: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Solve => Command::Solve,
        Cmd::Continue => Command::Continue,
        Cmd::Oracle => Command::Oracle,
        Cmd::Compare => Command::Compare,
        Cmd::Diagnose => Command::Diagnose,
        Cmd::Selftest => Command::Selftest,
    };
    let opts = RunOptions { config: cli.config, out: cli.out, grid: cli.grid, seed: cli.seed, field: cli.field };
    let result = run(command, &opts);
    if let Err(e) = &result {
        eprintln!("abreu: {e}");
    }
    ExitCode::from(exit_code(&result))
}
