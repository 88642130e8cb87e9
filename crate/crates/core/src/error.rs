use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("band count mismatch: endmembers have {endmember_bands} bands, cube has {cube_bands}")]
    DimensionMismatch {
        endmember_bands: usize,
        cube_bands: usize,
    },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("endmember matrix is rank deficient (Cholesky pivot {pivot:e} at column {column})")]
    RankDeficient { column: usize, pivot: f64 },

    #[error("a single endmember admits only the trivial abundance a = 1")]
    DegenerateProblem,

    #[error("half-space index {index} out of range for {count} endmembers")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("iterate became non-finite at sweep {sweep}")]
    NonFinite { sweep: usize },

    #[error("active-set oracle supports at most {max} endmembers, got {m}")]
    TooManyEndmembers { m: usize, max: usize },

    #[error("no KKT point found for pixel {pixel}")]
    NoKktPoint { pixel: usize },

    #[error(
        "only {found} of {requested} endmembers satisfy the {min_angle_deg}° angle constraint"
    )]
    InsufficientCandidates {
        found: usize,
        requested: usize,
        min_angle_deg: f64,
    },

    #[error("reference matrix has zero norm")]
    ZeroReference,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("{0}: file is empty")]
    EmptyFile(PathBuf),

    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("file truncated: header declares {expected} bytes, file has {actual}")]
    TruncatedFile { expected: u64, actual: u64 },

    #[error("file size mismatch: header declares {expected} bytes, file has {actual}")]
    TrailingData { expected: u64, actual: u64 },

    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
