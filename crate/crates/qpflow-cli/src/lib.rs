//! Command-line front end wiring the QP solver library together, plus the
//! independent Runge-Kutta reference integrator used for verification.

pub mod commands;
pub mod rk;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

/// Exit codes: 0 success, 1 verification failure, 2 input error,
/// 3 numerical failure.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Verify(String),
    Numeric(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Verify(_) => "verify",
            CliError::Numeric(_) => "numeric",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (CliError::Input(msg) | CliError::Verify(msg) | CliError::Numeric(msg)) = self;
        // Errors are always a single line so scripts can match on them.
        write!(f, "{}", msg.replace('\n', " "))
    }
}

impl From<qpflow_core::parser::ParseError> for CliError {
    fn from(e: qpflow_core::parser::ParseError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<qpflow_core::QpError> for CliError {
    fn from(e: qpflow_core::QpError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<qpflow_core::SeriesError> for CliError {
    fn from(e: qpflow_core::SeriesError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<rk::RkError> for CliError {
    fn from(e: rk::RkError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<qpflow_core::oracle::OracleError> for CliError {
    fn from(e: qpflow_core::oracle::OracleError) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qpflow",
    version,
    about = "Solve quasi-polynomial ODE systems via their Lotka-Volterra canonical form"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a system by piecewise Taylor expansion and write the trajectory
    Solve(SolveArgs),
    /// Embed a system into its Lotka-Volterra canonical form
    Canonicalize(CanonicalizeArgs),
    /// Cross-check the Taylor path against the Runge-Kutta reference
    Verify(VerifyArgs),
    /// Dump nonzero entries of the generalized-factorial tensor
    Tensor(TensorArgs),
    /// Print Taylor coefficients next to their brute-force oracle values
    Coeffs(CoeffsArgs),
}

#[derive(Debug, clap::Args)]
pub struct SolveArgs {
    /// System file: the ODE text format, or JSON when it starts with '{'
    #[arg(long)]
    pub system: PathBuf,
    /// Integration horizon
    #[arg(long = "t-end")]
    pub t_end: f64,
    /// Per-step truncation tolerance
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Taylor expansion order (4..=60)
    #[arg(long, default_value_t = 24)]
    pub order: usize,
    /// Output path; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
}

#[derive(Debug, clap::Args)]
pub struct CanonicalizeArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// Use the explicit square-case transform by the inverse exponent matrix
    /// instead of the monomial embedding
    #[arg(long)]
    pub square: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long = "t-end")]
    pub t_end: f64,
    /// Tolerance for both integrators; verification passes below 10x this
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 24)]
    pub order: usize,
}

#[derive(Debug, clap::Args)]
pub struct TensorArgs {
    /// Tensor dimension
    #[arg(long = "N")]
    pub dim: usize,
    /// Tensor order
    #[arg(long = "k")]
    pub order: usize,
    /// Fixed leading index (0-based)
    #[arg(long = "i")]
    pub index: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct CoeffsArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// Highest coefficient order to print
    #[arg(long = "k", default_value_t = 6)]
    pub order: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv prints the comparison table; json emits the series bundle
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
}
