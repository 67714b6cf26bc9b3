use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("weight grid does not match the assembled tensor")]
    GridMismatch,

    #[error("weight is not admissible: {0}")]
    Infeasible(String),

    #[error("factorization failed: {0}")]
    Factorization(&'static str),

    #[error("quadrature did not converge: estimate {estimate:e}, residual {residual:e}")]
    Quadrature { estimate: f64, residual: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable identifier, used in machine-readable error summaries.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::GridMismatch => "grid_mismatch",
            Error::Infeasible(_) => "infeasible",
            Error::Factorization(_) => "factorization",
            Error::Quadrature { .. } => "quadrature",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
