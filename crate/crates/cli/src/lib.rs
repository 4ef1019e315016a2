//! Command-line front end for `extremalkit`.
//!
//! Every subcommand is a plain function from parsed arguments to an
//! [`Output`], so tests can drive them without spawning a process.

mod commands;
pub mod error;
mod input;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    classify_report, cmd_catalog, cmd_check_multiplier, cmd_classify, cmd_cone, cmd_extremal,
    cmd_reach, cmd_simulate, cmd_transport,
};
pub use error::CliError;
pub use input::{load_control, load_problem};

#[derive(Debug, Parser)]
#[command(
    name = "extremalkit",
    version,
    about = "Needle variations, variational cones and extremal classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the built-in problems, or print one as problem JSON.
    Catalog(CatalogArgs),
    /// Integrate a control and write the trajectory CSV.
    Simulate(SimulateArgs),
    /// Transport matrix of the linearized flow between two grid nodes.
    Transport(TransportArgs),
    /// Build a sampled cone (or read generators) and enumerate its dual rays.
    Cone(ConeArgs),
    /// Decide extremal, normal, abnormal and strictly abnormal.
    Classify(ClassifyArgs),
    /// Verify a candidate multiplier `(eta_b, lambda)`.
    CheckMultiplier(CheckMultiplierArgs),
    /// Integrate the normal Hamiltonian system from `(x0, p0)`.
    Extremal(ExtremalArgs),
    /// Endpoints of random multi-needle variations against the dual rays.
    Reach(ReachArgs),
}

fn parse_steps(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|e| format!("{e}"))?;
    if n < 10 {
        return Err(format!("need at least 10 steps, got {n}"));
    }
    Ok(n)
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive and finite, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_nonnegative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be nonnegative and finite, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_count(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

/// Problem, initial state, grid and output options shared by most commands.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Problem JSON file, or a catalog name.
    #[arg(long)]
    pub problem: String,
    /// Initial state as comma-separated numbers; defaults to `x_a`, else 0.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// Integration steps (at least 10).
    #[arg(long, default_value = "1000", value_parser = parse_steps)]
    pub steps: usize,
    /// Write the main artifact to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Machine-readable JSON instead of a human summary.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SamplingArgs {
    /// Needle times drawn from the grid.
    #[arg(long, default_value = "64", value_parser = parse_count)]
    pub time_samples: usize,
    /// Alternative controls per needle time.
    #[arg(long, default_value = "64", value_parser = parse_count)]
    pub fiber_samples: usize,
    /// RNG seed; falls back to EXTREMALKIT_SEED, then 0.
    #[arg(long, env = "EXTREMALKIT_SEED", default_value = "0")]
    pub seed: u64,
    /// Fiber sampler: grid, latin-hypercube, gaussian-shells or auto.
    #[arg(long, default_value = "auto")]
    pub sampler: String,
    /// Leave out the one-sided derivative generators.
    #[arg(long)]
    pub no_tangents: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TolArgs {
    /// Residual bound for stationarity in the control.
    #[arg(long, value_parser = parse_positive)]
    pub tol_stationarity: Option<f64>,
    /// Residual bound for the adjoint equation.
    #[arg(long, value_parser = parse_positive)]
    pub tol_adjoint: Option<f64>,
    /// Margin allowed when checking the maximum condition.
    #[arg(long, value_parser = parse_positive)]
    pub tol_maximization: Option<f64>,
    /// Tolerance for cone membership and the normal-LP value.
    #[arg(long, value_parser = parse_positive)]
    pub tol_cone: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CatalogArgs {
    /// Print this entry as problem JSON.
    pub name: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Control JSON file, or an inline JSON object.
    #[arg(long)]
    pub control: String,
}

#[derive(Debug, Clone, Args)]
pub struct TransportArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Control JSON file, or an inline JSON object.
    #[arg(long)]
    pub control: String,
    /// Start time (a grid node); defaults to `a`.
    #[arg(long, allow_hyphen_values = true)]
    pub from: Option<f64>,
    /// End time (a grid node); defaults to `b`.
    #[arg(long, allow_hyphen_values = true)]
    pub to: Option<f64>,
    /// Include the cost row.
    #[arg(long)]
    pub extended: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ConeKind {
    /// Vertical cone of the cost-extended system, `ℝ^{d+1}`.
    Extended,
    /// Vertical cone in `ℝ^d`.
    Vertical,
    /// Variational cone in `ℝ × ℝ^d`, time first.
    Variational,
}

#[derive(Debug, Clone, Args)]
pub struct ConeArgs {
    /// Problem JSON file or catalog name; requires --control.
    #[arg(long, conflicts_with = "generators", requires = "control")]
    pub problem: Option<String>,
    #[arg(long)]
    pub control: Option<String>,
    /// JSON array of generator vectors; the last axis is read as the cost.
    #[arg(long)]
    pub generators: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "extended")]
    pub kind: ConeKind,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long, default_value = "1000", value_parser = parse_steps)]
    pub steps: usize,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long, value_parser = parse_positive)]
    pub tol_cone: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Control JSON file, or an inline JSON object.
    #[arg(long)]
    pub control: String,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub tol: TolArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CheckMultiplierArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Control JSON file, or an inline JSON object.
    #[arg(long)]
    pub control: String,
    /// Final covector, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    pub eta_b: String,
    /// Cost multiplier, at most 0.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: f64,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub tol: TolArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExtremalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Initial costate, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    pub p0: String,
    /// Cost multiplier; must be negative.
    #[arg(long, allow_hyphen_values = true, default_value = "-1")]
    pub lambda: f64,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub tol: TolArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReachArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Control JSON file, or an inline JSON object.
    #[arg(long)]
    pub control: String,
    /// Random needle sets to draw.
    #[arg(long, default_value = "100", value_parser = parse_count)]
    pub samples: usize,
    /// Variation size; the report also reruns every set at eps/2.
    #[arg(long, default_value = "0.01", value_parser = parse_nonnegative)]
    pub eps: f64,
    /// Largest number of needles in one set.
    #[arg(long, default_value = "3", value_parser = parse_count)]
    pub needles: usize,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

/// What a command prints: `stdout` is the primary stream, `stderr` carries
/// human summaries when stdout holds data.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Output {
    pub stdout: String,
    pub stderr: String,
}

pub fn run(cli: &Cli) -> Result<Output, CliError> {
    match &cli.command {
        Command::Catalog(a) => cmd_catalog(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Transport(a) => cmd_transport(a),
        Command::Cone(a) => cmd_cone(a),
        Command::Classify(a) => cmd_classify(a),
        Command::CheckMultiplier(a) => cmd_check_multiplier(a),
        Command::Extremal(a) => cmd_extremal(a),
        Command::Reach(a) => cmd_reach(a),
    }
}
