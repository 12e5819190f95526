use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variants are grouped by [`ErrorKind`], which the CLI maps onto its exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} must be at least {min}, got {got}")]
    DimensionTooSmall {
        what: &'static str,
        got: usize,
        min: usize,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("eigensolver did not converge within {iterations} iterations")]
    ConvergenceFailure { iterations: usize },
    #[error("matrix is not positive semidefinite: eigenvalue {min} against largest {max}")]
    NotPositiveSemidefinite { min: f64, max: f64 },
    #[error("negative variance {value} in dimension {index}")]
    NegativeVariance { index: usize, value: f64 },
    #[error("eigenvalue spectrum has zero norm")]
    ZeroSpectrum,
    #[error("sampled row {index} has zero norm")]
    ZeroVectorSampled { index: usize },
    #[error("row {index} has zero norm")]
    ZeroVectorRow { index: usize },
    #[error("projection {value} exceeds the exp overflow guard of 700; rescale the input")]
    OverflowGuard { value: f64 },
    #[error("eigenvalue gap {gap:e} is below {threshold:e}; eigenvalue gradients are ill-defined")]
    DegenerateSpectrum { gap: f64, threshold: f64 },
    #[error("point {index} has a duplicate (zero nearest-neighbor distance)")]
    DuplicatePoints { index: usize },
    #[error("too few points: got {got}, need at least {min}")]
    TooFewPoints { got: usize, min: usize },
    #[error("all nearest-neighbor distance ratios are 1; intrinsic dimension is unbounded")]
    DegenerateNeighborRatios,
    #[error("shrinkage sample too small: got {got} points, need at least {min}")]
    SampleTooSmall { got: usize, min: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("ragged CSV at line {line}: expected {expected} columns, got {got}")]
    RaggedCsv {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-numeric cell {text:?} at line {line}, column {column}")]
    NonNumericCell {
        line: usize,
        column: usize,
        text: String,
    },
    #[error("content hash mismatch for {}", path.display())]
    HashMismatch { path: PathBuf },
    #[error("config hash mismatch within experiment grid: {expected} vs {got}")]
    ConfigHashMismatch { expected: String, got: String },
    #[error("I/O failure: {0}")]
    Io(#[from] io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification of [`Error`] used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            InvalidParameter(_) | InvalidConfig(_) => ErrorKind::Usage,
            ConvergenceFailure { .. }
            | NotPositiveSemidefinite { .. }
            | ZeroSpectrum
            | OverflowGuard { .. }
            | DegenerateSpectrum { .. }
            | DegenerateNeighborRatios => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    /// Process exit code: 2 usage, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}
