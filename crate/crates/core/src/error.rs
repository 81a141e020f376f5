use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// The `Display` output is a single line so the CLI can print it verbatim as a
/// machine-parsable error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("referential error: {0}")]
    Referential(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("provider error: {0}")]
    Provider(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag for the error class, used as the first field of CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Domain(_) => "domain",
            Error::Contract(_) => "contract",
            Error::Configuration(_) => "configuration",
            Error::Training(_) => "training",
            Error::DegenerateBatch(_) => "degenerate_batch",
            Error::Data(_) => "data",
            Error::Parse { .. } => "parse",
            Error::Referential(_) => "referential",
            Error::Format(_) => "format",
            Error::Checkpoint(_) => "checkpoint",
            Error::Evaluation(_) => "evaluation",
            Error::Input(_) => "input",
            Error::Protocol(_) => "protocol",
            Error::Provider(_) => "provider",
            Error::Io { .. } => "io",
        }
    }
}
