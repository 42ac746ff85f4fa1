use std::path::PathBuf;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("duplicate index {0}")]
    DuplicateIndex(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid test fraction {fraction} for {n} rows")]
    InvalidFraction { fraction: f64, n: usize },

    #[error("invalid learner spec: {0}")]
    InvalidSpec(String),

    #[error("invalid alpha {0}, must lie in (0, 1)")]
    InvalidAlpha(f64),

    #[error("invalid AR(1) correlation {0}, must satisfy |rho| < 1")]
    InvalidRho(f64),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("{learner} did not converge after {iterations} iterations (last change {last_change:e})")]
    NonConvergence {
        learner: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("fold {fold} leaves only {complement} training rows")]
    FoldTooSmall { fold: usize, complement: usize },

    #[error("fold {fold}: mean psi_a is {mean_psi_a:e}; no residual treatment variation")]
    DegenerateFold { fold: usize, mean_psi_a: f64 },

    #[error("pooled mean psi_a is {0:e}; no residual treatment variation")]
    DegenerateAggregate(f64),

    #[error("score jacobian {0:e} is numerically zero")]
    DegenerateJacobian(f64),

    #[error("cholesky factorization failed: {0}")]
    Cholesky(String),

    #[error("replication {rep} (seed {seed}) failed: {source}")]
    Replication {
        rep: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_)
            | Error::InvalidFraction { .. }
            | Error::InvalidSpec(_)
            | Error::InvalidAlpha(_)
            | Error::InvalidRho(_) => ErrorClass::Config,
            Error::NonFinite { .. }
            | Error::Schema(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::IndexOutOfRange { .. }
            | Error::DuplicateIndex(_)
            | Error::DimensionMismatch(_) => ErrorClass::Data,
            Error::Replication { source, .. } => match source.class() {
                ErrorClass::Config => ErrorClass::Config,
                _ => ErrorClass::Numeric,
            },
            _ => ErrorClass::Numeric,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
