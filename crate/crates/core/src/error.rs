use std::path::PathBuf;

use thiserror::Error;

use crate::dart::DartReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("too many clients: {clients} clients for {samples} samples")]
    TooManyClients { clients: usize, samples: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parameter layout mismatch")]
    LayoutMismatch,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown corruption filter `{0}`")]
    UnknownFilter(String),

    #[error("unknown augmentation op `{0}`")]
    UnknownAugOp(String),

    #[error("unknown training mode `{0}`")]
    UnknownMode(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("budget exhausted after round {round}: {detail}")]
    BudgetExhausted { round: usize, detail: String },

    #[error("DART aborted at epoch {epoch}: {reason}")]
    DartAborted {
        epoch: usize,
        reason: String,
        report: Box<DartReport>,
    },

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
