use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tdbsde_cli::{dispatch, parse_config, Command, RunError};

#[derive(Parser)]
#[command(
    name = "tdbsde",
    version,
    about = "Hedge and verify path-dependent guarantee products"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Classify a ratchet product and report its binding condition.
    Classify(Common),
    /// Hedge the discrete-anniversary ratchet on an ensemble.
    HedgeRatchetDiscrete(Common),
    /// Build the drawdown-constrained portfolio on an ensemble.
    HedgeRatchetContinuous(Common),
    /// Hedge the average-participation claim on an ensemble.
    HedgeAsian(Common),
    /// Solve the minimum-withdrawal claim by Picard iteration.
    SolveWithdrawal(Common),
    /// Solve the OBPI participation factor.
    ObpiLambda(Common),
    /// Run a coupled-noise convergence study.
    Convergence(Common),
    /// Check the short-rate model against the market assumptions.
    CheckAssumptions(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accept tolerances looser than the defaults; the report is marked.
    #[arg(long)]
    force: bool,
}

fn run(cli: Cli) -> Result<i32, RunError> {
    let (command, args) = match cli.command {
        Sub::Classify(a) => (Command::Classify, a),
        Sub::HedgeRatchetDiscrete(a) => (Command::HedgeRatchetDiscrete, a),
        Sub::HedgeRatchetContinuous(a) => (Command::HedgeRatchetContinuous, a),
        Sub::HedgeAsian(a) => (Command::HedgeAsian, a),
        Sub::SolveWithdrawal(a) => (Command::SolveWithdrawal, a),
        Sub::ObpiLambda(a) => (Command::ObpiLambda, a),
        Sub::Convergence(a) => (Command::Convergence, a),
        Sub::CheckAssumptions(a) => (Command::CheckAssumptions, a),
    };
    let text = std::fs::read_to_string(&args.config).map_err(|source| RunError::Io {
        path: args.config.clone(),
        source,
    })?;
    let mut config = parse_config(&text)?;
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    if let Some(paths) = args.paths {
        config.run.paths = paths;
    }
    if let Some(steps) = args.steps {
        config.grid.steps = steps;
    }
    if let Some(out) = args.out {
        config.run.out = out.to_string_lossy().into_owned();
    }
    let outcome = dispatch(&config, command, args.force)?;
    println!("{}", outcome.summary);
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
