use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the domain of the operation (e.g. `R < 1`).
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was called in a state that does not allow it.
    #[error("invalid state: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The chip allocation carries too little information to fit a distribution.
    #[error("degenerate allocation: {0}")]
    FitDegenerate(String),

    /// The empirical default prior is not available on this outcome scale.
    #[error("no default prior for this scale: {0}")]
    UnsupportedDefault(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }

    /// Short machine-readable tag used in error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::State(_) => "state",
            Error::Config(_) => "config",
            Error::FitDegenerate(_) => "fit_degenerate",
            Error::UnsupportedDefault(_) => "unsupported_default",
            Error::Parse { .. } => "parse",
            Error::NotFound(_) => "not_found",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
