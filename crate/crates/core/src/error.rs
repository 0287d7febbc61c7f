use thiserror::Error;

use crate::candidates::LatentVector;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure reported by a score source (synthetic or remote).
#[derive(Debug, Error)]
pub enum OracleError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out after {0} ms")]
    Timeout(u64),
    #[error("malformed response: {0}")]
    Parse(String),
    #[error("missing credential: environment variable `{0}` is not set")]
    MissingCredential(String),
    #[error("candidate {0} has no prompt text")]
    MissingPrompt(usize),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("candidate index {index} out of range (N = {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("candidate {0} has never been evaluated")]
    NeverEvaluated(usize),
    #[error("observation log is empty")]
    EmptyLog,
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),
    #[error("latent set extension stopped after {attempts} attempts with {} of {target} vectors", found.len())]
    SearchExhausted {
        attempts: usize,
        target: usize,
        found: Vec<LatentVector>,
    },
    #[error("sampler diverged: {0}")]
    Diverged(String),
    #[error("oracle failed after {attempts} attempts: {source}")]
    Oracle {
        attempts: usize,
        #[source]
        source: OracleError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(expected: usize, got: usize, context: &'static str) -> Self {
        Error::DimensionMismatch {
            expected,
            got,
            context,
        }
    }
}
