use thiserror::Error;

use crate::model::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: String, expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular dynamics Jacobian at stage {stage}")]
    Singular { stage: usize },

    #[error("stage {stage}: {reason}")]
    StageFailure { stage: usize, reason: String },

    #[error("implicit step at stage {stage} did not converge (residual {residual:e})")]
    ImplicitStep { stage: usize, residual: f64 },

    #[error("solver did not converge after {iterations} iterations (KKT residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        best: Box<Trajectory>,
    },

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("unsupported file version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            got,
        }
    }
}
