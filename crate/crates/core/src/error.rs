use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent user input (shapes, ranges, files).
    #[error("input error: {0}")]
    Input(String),

    /// A parameter outside the domain of a density or sampler.
    #[error("domain error: {0}")]
    Domain(String),

    /// Factorization failures, non-finite values, singular systems.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The inner or outer solver failed to converge.
    #[error("estimation error: {message}")]
    Estimation {
        message: String,
        /// Last iterate of the failing solver, when one exists.
        last_iterate: Option<Vec<f64>>,
    },

    /// The requested operation is not defined for this model configuration.
    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn estimation(msg: impl Into<String>, last_iterate: Option<Vec<f64>>) -> Self {
        Error::Estimation {
            message: msg.into(),
            last_iterate,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Io(_) => 2,
            Error::Domain(_) => 2,
            Error::Estimation { .. } => 3,
            Error::Numeric(_) => 4,
            Error::Unsupported(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
