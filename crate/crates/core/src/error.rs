use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Configuration or parameter outside its documented domain.
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("I/O error: {0}")]
    Stream(#[from] std::io::Error),

    /// Input file is readable but its contents are unusable.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("unparseable URL {raw:?}: {reason}")]
    Url { raw: String, reason: String },

    /// Inputs are consistent but carry no information for the requested analysis.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A numeric argument outside the operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("data integrity: {0}")]
    Integrity(String),

    #[error("scoring service: {0}")]
    Service(String),

    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Process exit code for the CLI.
    ///
    /// 0 success, 1 validation, 2 input, 3 degenerate analysis input, 4 service failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 1,
            Error::Io { .. } | Error::Stream(_) | Error::Input(_) | Error::Url { .. } => 2,
            Error::Integrity(_) => 2,
            Error::Degenerate(_) | Error::Domain(_) => 3,
            Error::Service(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
