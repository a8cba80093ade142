use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("estimator failure: {0}")]
    Estimator(String),

    #[error("no convergence: {message} (best residual {residual:.3e})")]
    Convergence { message: String, residual: f64 },

    #[error("oracle budget exceeded after {calls} calls: {message}")]
    Budget { calls: u64, message: String },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Domain(_) | Error::Parameter(_) | Error::Parse { .. } => 2,
            Error::Estimator(_) | Error::Convergence { .. } | Error::Budget { .. } => 3,
            Error::Json(e) if e.is_syntax() || e.is_data() => 2,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
