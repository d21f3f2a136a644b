use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The gravity wrench is not in the range of the contact wrench map.
    #[error("no equilibrium exists: residual {residual:.3e} N after least-squares solve")]
    NoEquilibrium { residual: f64 },

    #[error("solver error: {0}")]
    Solver(String),

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
