//! `cdpkit` command-line front end.
//!
//! Exit codes: 0 success, 1 check or convergence failure, 2 usage or
//! configuration error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use cdpkit::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cdpkit", version, about = "Constraint dissolving toolkit")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only print errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the dissolving-operator axioms of a manifold family.
    Validate(ValidateArgs),
    /// Solve one problem instance and write its trace.
    Solve(SolveArgs),
    /// Estimate local constants and probe penalty and decrease properties.
    Probe(ProbeArgs),
    /// Run both pipelines over a benchmark grid.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
pub struct FamilyArgs {
    /// Problem family (center_of_mass, balanced_cut, custom) or a manifold
    /// family (oblique, sphere, symplectic_stiefel, generic_sphere).
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of samples (center of mass).
    #[arg(long = "N")]
    pub n_samples: Option<usize>,
    /// Squared ball radius (center of mass).
    #[arg(long)]
    pub r: Option<f64>,
    /// Edge probability (balanced cut).
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct ProblemArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    /// TOML problem file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-path override, e.g. `solver.max_outer=50` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Penalty on the transformed equalities (all components).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Penalty on the transformed inequalities (all components).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Emit machine-readable JSON lines.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long, default_value_t = 100)]
    pub probes: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Cdp,
    Nlp,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, value_enum, default_value_t = Pipeline::Cdp)]
    pub pipeline: Pipeline,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Trace CSV path.
    #[arg(long, default_value = "trace.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Radius of the sampling ball for the constant estimates.
    #[arg(long, default_value_t = 0.1)]
    pub radius: f64,
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    /// Number of decrease probes inside the estimated neighborhood.
    #[arg(long, default_value_t = 20)]
    pub points: usize,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Grid file; `.toml` is appended when the bare path does not exist.
    #[arg(long)]
    pub grid: PathBuf,
    /// Output directory for the CSV and markdown tables.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Instances solved concurrently (capped by CDPKIT_THREADS).
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Per-run wall-clock budget in seconds.
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub json: bool,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. }
        | Error::Dimension { .. }
        | Error::Parameter { .. }
        | Error::RankDeficient { .. }
        | Error::NearRankDeficient { .. }
        | Error::Generation(_)
        | Error::Io(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, 2) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let result = match cli.command {
        Command::Validate(a) => commands::validate(&a),
        Command::Solve(a) => commands::solve(&a),
        Command::Probe(a) => commands::probe(&a),
        Command::Bench(a) => commands::bench(&a),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            if matches!(
                err,
                Error::RankDeficient { .. } | Error::NearRankDeficient { .. }
            ) {
                eprintln!("error: assumption violated: {err}");
            } else {
                eprintln!("error: {err}");
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
