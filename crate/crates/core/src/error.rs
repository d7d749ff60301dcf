use thiserror::Error;

/// Failure classes. Each maps onto one CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("hypothesis {hypothesis} violated: {detail}")]
    Hypothesis { hypothesis: String, detail: String },
    #[error("numerical resolution failure: {0}")]
    Resolution(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("instability: {0}")]
    Instability(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub fn hypothesis(name: &str, detail: impl Into<String>) -> Self {
        Error::Hypothesis {
            hypothesis: name.to_string(),
            detail: detail.into(),
        }
    }

    /// 0 ok, 2 hypothesis violation, 3 numerical resolution, 4 configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Hypothesis { .. } => 2,
            Error::Resolution(_) | Error::Instability(_) => 3,
            Error::Config(_) | Error::Domain(_) | Error::Precondition(_) => 4,
            Error::Io(_) | Error::Serialization(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
