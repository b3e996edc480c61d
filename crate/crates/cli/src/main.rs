//! `karma`: solve, simulate and sweep karma mechanism scenarios.

mod commands;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use karma_core::simulation::Scheme;
use karma_core::KarmaError;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "karma", version, about)]
pub struct Cli {
    /// Overrides the scenario's simulation seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "karma-out")]
    pub out_dir: PathBuf,
    /// error, warn, info, debug or trace; RUST_LOG takes precedence.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a stationary equilibrium and export it.
    Solve(SolveArgs),
    /// Simulate the karma policy and benchmark schemes; write welfare reports.
    Simulate(SimulateArgs),
    /// Simulate the benchmark schemes only and compare with their closed forms.
    Benchmark(SimulateArgs),
    /// Solve and simulate once per parameter value; write a trade-off table.
    Sweep(SweepArgs),
    /// Parse and validate a scenario, then print it in normalized form.
    Validate(ScenarioArg),
}

#[derive(Debug, Args)]
pub struct ScenarioArg {
    /// Scenario file (TOML) or bundled preset name.
    pub scenario: String,
}

/// Overrides applied on top of the scenario file.
#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// Discount factor for every type; 1 selects average-reward mode.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Generic override, `name=value`; repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub scenario: ScenarioArg,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArg,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Directory with `distribution.csv` and `policy.csv` from `solve`;
    /// without it the scenario is solved first.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub schemes: Option<Vec<Scheme>>,
    /// Number of agents.
    #[arg(long)]
    pub n: Option<usize>,
    /// Interactions per agent.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Write per-interaction trace CSVs.
    #[arg(long)]
    pub traces: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArg,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Parameter to vary, e.g. alpha or tax_coefficient.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values; may be empty.
    #[arg(long, value_parser = parse_values, default_value = "")]
    pub values: Values,
    #[arg(long, value_delimiter = ',')]
    pub schemes: Option<Vec<Scheme>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Values(pub Vec<f64>);

fn parse_values(s: &str) -> Result<Values, String> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| format!("{v:?} is not a number")))
        .collect::<Result<_, _>>()
        .map(Values)
}

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<KarmaError>() {
        Some(KarmaError::Io(_)) | Some(KarmaError::EmptyTrace) | None => EXIT_FAILURE,
        Some(_) => EXIT_INVALID,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = EnvFilter::try_from_default_env()
        .or_else(|_| EnvFilter::try_new(&cli.log_level))
        .unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();

    match commands::run(&cli) {
        Ok(commands::Outcome::Done) => ExitCode::SUCCESS,
        Ok(commands::Outcome::NotConverged) => ExitCode::from(EXIT_NOT_CONVERGED),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
