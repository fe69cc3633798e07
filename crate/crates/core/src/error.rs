use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("transition matrix is not irreducible (state {from} cannot reach state {to})")]
    NotIrreducible { from: usize, to: usize },
    #[error("linear solver failed: {0}")]
    SolverFailure(String),
    #[error("truncation horizon too small: tail bound {tail:.3e} exceeds {tolerance:.1e} x partial sum {partial:.3e}")]
    TruncationTooSmall {
        tail: f64,
        partial: f64,
        tolerance: f64,
    },
    #[error("features are rank deficient (rank {rank} < {d} columns)")]
    RankDeficientFeatures { rank: usize, d: usize },
    #[error("projected system matrix A is numerically singular")]
    SingularSystem,
    #[error("projected value iteration did not converge in {0} iterations")]
    MaxIterExceeded(usize),
    #[error("CTD epoch buffer incomplete: {have} of {need} entries")]
    EpochBufferIncomplete { have: usize, need: usize },
    #[error("non-finite iterate at iteration {0}")]
    NonFiniteIterate(u64),
    #[error("inadmissible step size: {0}")]
    InadmissibleStepSize(String),
    #[error("alpha = {0} outside (1/2, 1); sum of k^(-2 alpha) diverges for alpha <= 1/2")]
    AlphaOutOfRange(f64),
    #[error("denominator (1 - beta) - d^2 gamma / 2 = {0:.3e} is not positive")]
    DenominatorNonPositive(f64),
    #[error("features still rank deficient after {0} resampling attempts")]
    RankDeficientAfterRetries(usize),
    #[error("every run of {0} diverged")]
    AllRunsDiverged(String),
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("run {run} ({algorithm}): {source}")]
    Run {
        run: usize,
        algorithm: String,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for errors caused by bad input (as opposed to failures while computing).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidModel(_)
            | Error::DimensionMismatch { .. }
            | Error::NotIrreducible { .. }
            | Error::TruncationTooSmall { .. }
            | Error::RankDeficientFeatures { .. }
            | Error::RankDeficientAfterRetries(_)
            | Error::InadmissibleStepSize(_)
            | Error::AlphaOutOfRange(_)
            | Error::DenominatorNonPositive(_)
            | Error::InvalidSpec(_)
            | Error::Parse(_) => true,
            Error::Run { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
