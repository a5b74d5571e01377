use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("user {user} appears in the ratings file but not in the users file")]
    MissingUser { user: String },

    #[error("k-core with k={k} is empty")]
    EmptyKCore { k: usize },

    #[error("attribute group {group} has no users")]
    EmptyGroup { group: &'static str },

    #[error("unknown item {0}")]
    UnknownItem(usize),

    #[error("unknown user {0}")]
    UnknownUser(usize),

    #[error("user {user} has no replacement candidates left")]
    NoReplacementCandidates { user: usize },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("labels contain a single class")]
    SingleClass,

    #[error("could not draw a split with both classes in every part after {retries} attempts")]
    SplitMissingClass { retries: usize },

    #[error("baseline must be positive, got {0}")]
    NonPositiveBaseline(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
