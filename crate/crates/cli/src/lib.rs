//! `nsqkd` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (unreadable or invalid
//! input), 3 solver failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub mod commands;
pub mod strategy;

/// Version tag written into every JSON report.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Solver(_) => 3,
        }
    }
}

impl From<nsqkd_core::Error> for CliError {
    fn from(e: nsqkd_core::Error) -> Self {
        use nsqkd_core::Error as E;
        match e {
            E::Params(_) | E::Dimension(_) => Self::Usage(e.to_string()),
            E::Solver { .. } => Self::Solver(e.to_string()),
            E::InvalidValue(_) | E::EmptyStatistic | E::Parse(_) => Self::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nsqkd", version, about = "Simulate and bound a chained-Bell key distribution protocol")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo runs of the protocol against a source strategy.
    Simulate(SimulateArgs),
    /// Eve's optimal no-signalling guessing probability for a target box.
    AttackBound(AttackBoundArgs),
    /// Local bound, quantum value and guessing bounds over a range of N.
    BellScan(BellScanArgs),
    /// Validate a box file and report its chained statistic.
    CheckBox(CheckBoxArgs),
    /// Write a builtin box to a box file.
    ExportBox(ExportBoxArgs),
    /// Recommended M and epsilon for N, with an optional consistency check.
    Params(ParamsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TextFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Party {
    Alice,
    Bob,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of measurement bases.
    #[arg(long = "N")]
    pub n: usize,
    /// Pair-count multiplier; each run uses M·N² pairs.
    #[arg(long = "M")]
    pub m: usize,
    #[arg(long)]
    pub runs: u64,
    /// honest | uniform | det:a=..,b=..[,guess=a0] | lhv:<file> | box:<file>
    #[arg(long)]
    pub strategy: String,
    /// Generated and reported when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pass-rate threshold for the lemma comparison [default: N^(-1/4)].
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write every run's transcript as JSON lines.
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
    /// Worker threads [default: available parallelism].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AttackBoundArgs {
    #[arg(long = "N")]
    pub n: usize,
    /// singlet | uniform | det:a=..,b=.. | file:<path>
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 2)]
    pub eve_outcomes: usize,
    /// Secret settings x,y; must be neighbouring or identical.
    #[arg(long, default_value = "0,1", conflicts_with = "average")]
    pub settings: String,
    /// Average over every qualifying settings pair.
    #[arg(long)]
    pub average: bool,
    #[arg(long, value_enum, default_value_t = Party::Alice)]
    pub guess: Party,
    /// Write the optimal tripartite box here (fixed settings only).
    #[arg(long, conflicts_with = "average")]
    pub box_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BellScanArgs {
    #[arg(long, default_value_t = 2)]
    pub n_min: usize,
    #[arg(long, default_value_t = 8)]
    pub n_max: usize,
    /// Also solve the attack LP against the singlet at each N.
    #[arg(long)]
    pub lp: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckBoxArgs {
    pub path: PathBuf,
    #[arg(long, default_value_t = nsqkd_core::boxes::NS_TOL)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = TextFormat::Text)]
    pub format: TextFormat,
    /// Exit with status 2 when any constraint is violated.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct ExportBoxArgs {
    #[arg(long = "N")]
    pub n: usize,
    /// singlet | uniform | det:a=..,b=..
    #[arg(long)]
    pub target: String,
    /// Mix with white noise: v·box + (1−v)·uniform.
    #[arg(long, default_value_t = 1.0)]
    pub visibility: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long = "N")]
    pub n: usize,
    /// Overrides the recommended M.
    #[arg(long = "M")]
    pub m: Option<usize>,
    /// Overrides the recommended epsilon.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Eve's assumed advantage δ; needs --delta-prime.
    #[arg(long, requires = "delta_prime")]
    pub delta: Option<f64>,
    #[arg(long, requires = "delta")]
    pub delta_prime: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                1
            } else {
                let _ = write!(out, "{}", e.render());
                0
            };
            return code;
        }
    };
    match commands::dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
