//! Command-line front end for the `sudap` unmixing library.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |-----:|---------|
//! | 0 | success |
//! | 2 | usage error (bad flags or flag values) |
//! | 3 | I/O error |
//! | 4 | malformed input file |
//! | 5 | dimension or shape mismatch |
//! | 6 | rank-deficient or degenerate endmembers |
//! | 7 | numerical failure |
//! | 8 | too many endmembers for the oracle |
//! | 9 | not enough endmember candidates at the requested angle |
//! | 10 | invalid input value |
//! | 11 | a validation property failed |

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod benchmark;
pub mod simulate;
pub mod unmix;
pub mod validate;

pub use benchmark::BenchmarkArgs;
pub use simulate::SimulateArgs;
pub use unmix::UnmixArgs;
pub use validate::ValidateArgs;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_FORMAT: u8 = 4;
pub const EXIT_SHAPE: u8 = 5;
pub const EXIT_RANK: u8 = 6;
pub const EXIT_NUMERIC: u8 = 7;
pub const EXIT_TOO_MANY: u8 = 8;
pub const EXIT_CANDIDATES: u8 = 9;
pub const EXIT_INVALID: u8 = 10;
pub const EXIT_VALIDATION: u8 = 11;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] sudap::Error),
    #[error("{0}")]
    Usage(String),
    #[error("validation failed: {}", .0.join(", "))]
    ValidationFailed(Vec<String>),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(sudap::Error::Io(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(sudap::Error::Csv(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use sudap::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::ValidationFailed(_) => EXIT_VALIDATION,
            CliError::Core(e) => match e {
                E::Io(_) => EXIT_IO,
                E::Parse { .. }
                | E::EmptyFile(_)
                | E::BadMagic { .. }
                | E::TruncatedFile { .. }
                | E::TrailingData { .. }
                | E::VersionUnsupported(_)
                | E::Csv(_) => EXIT_FORMAT,
                E::DimensionMismatch { .. }
                | E::ShapeMismatch { .. }
                | E::IndexOutOfRange { .. } => EXIT_SHAPE,
                E::RankDeficient { .. } | E::DegenerateProblem => EXIT_RANK,
                E::NonFinite { .. } | E::NoKktPoint { .. } | E::ZeroReference => EXIT_NUMERIC,
                E::TooManyEndmembers { .. } => EXIT_TOO_MANY,
                E::InsufficientCandidates { .. } => EXIT_CANDIDATES,
                E::InvalidInput(_) => EXIT_INVALID,
            },
        }
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sudap", version, about = "Fully constrained spectral unmixing")]
pub struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true, env = "SUDAP_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic spectral library CSV.
    Library(LibraryArgs),
    /// Draw endmembers and abundances and write a noisy cube.
    Simulate(SimulateArgs),
    /// Estimate abundances for a cube.
    Unmix(UnmixArgs),
    /// Time SUDAP against the exact oracle over a parameter sweep.
    Benchmark(BenchmarkArgs),
    /// Run the property suite on seeded random instances.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct LibraryArgs {
    #[arg(long, default_value_t = 224)]
    pub bands: usize,
    #[arg(long, default_value_t = 100)]
    pub signatures: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Sudap,
    Ls,
    #[value(name = "ls-sum1")]
    LsSum1,
    Oracle,
}

impl From<SolverArg> for sudap::solver::SolverId {
    fn from(s: SolverArg) -> Self {
        use sudap::solver::SolverId;
        match s {
            SolverArg::Sudap => SolverId::Sudap,
            SolverArg::Ls => SolverId::Ls,
            SolverArg::LsSum1 => SolverId::LsSum1,
            SolverArg::Oracle => SolverId::Oracle,
        }
    }
}

/// `prefix` with `suffix` appended to its final component.
pub(crate) fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn library(args: &LibraryArgs, out: &mut dyn Write) -> CliResult {
    let lib = sudap::simdata::synthetic_library(args.bands, args.signatures, args.seed)?;
    sudap::io::write_library_csv(&args.out, &lib)?;
    writeln!(
        out,
        "wrote {} signatures x {} bands to {}",
        lib.len(),
        lib.n_bands(),
        args.out.display()
    )?;
    Ok(())
}

fn dispatch(command: &Command, out: &mut (dyn Write + Send)) -> CliResult {
    match command {
        Command::Library(a) => library(a, out),
        Command::Simulate(a) => simulate::run(a, out),
        Command::Unmix(a) => unmix::run(a, out),
        Command::Benchmark(a) => benchmark::run(a, out),
        Command::Validate(a) => validate::run(a, out),
    }
}

/// Runs a parsed command line, writing the report to `out`.
pub fn run(cli: &Cli, out: &mut (dyn Write + Send)) -> CliResult {
    match cli.threads {
        None => dispatch(&cli.command, out),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?;
            pool.install(|| dispatch(&cli.command, out))
        }
    }
}
