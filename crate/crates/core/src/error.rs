use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class. The CLI maps these onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Convergence,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("ill-conditioned instance: {0}")]
    IllConditioned(String),

    #[error("rank deficiency: {0}")]
    Rank(String),

    #[error("no convergence: {0}")]
    Convergence(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Convergence(_) => ErrorKind::Convergence,
            Error::Stage { source, .. } => source.kind(),
            Error::Dimension(_)
            | Error::Data(_)
            | Error::IllConditioned(_)
            | Error::Rank(_)
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::Json(_) => ErrorKind::Data,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
