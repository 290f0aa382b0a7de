use thiserror::Error;

use crate::universe::ItemId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("duplicate item name {0:?}")]
    DuplicateName(String),

    #[error("items {first} and {second} share an identical attribute profile")]
    DuplicateProfile { first: ItemId, second: ItemId },

    #[error("value {value:?} is outside the domain of section {section:?}")]
    OutOfDomain { section: String, value: String },

    #[error("infeasible synthetic spec: {possible} distinct profiles available, {requested} requested")]
    InfeasibleSpec { possible: u128, requested: usize },

    #[error("unknown section {0:?}")]
    UnknownSection(String),

    #[error("section {section:?} is {actual}, condition expects {expected}")]
    KindMismatch {
        section: String,
        expected: &'static str,
        actual: &'static str,
    },

    #[error("invalid condition: {0}")]
    InvalidCondition(String),

    #[error("unknown item {0}")]
    UnknownItem(String),

    #[error("universe is empty")]
    EmptyUniverse,

    #[error("no rounds remaining")]
    RoundsExhausted,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("out-of-vocabulary token {token:?} at {location}")]
    OutOfVocabulary { token: String, location: String },

    #[error("budget of {budget} tokens cannot hold the opening round ({needed} tokens)")]
    BudgetTooSmall { budget: u64, needed: u64 },

    #[error("ineligible: {0}")]
    Ineligible(String),

    #[error("quota infeasible for bucket {bucket}, question type {question_type}: {reason}")]
    QuotaInfeasible {
        bucket: u64,
        question_type: String,
        reason: String,
    },

    #[error("malformed transcript at message {index}: {message}")]
    Transcript { index: usize, message: String },

    #[error("endpoint error: {0}")]
    Endpoint(String),

    #[error("results do not match the dataset: {0}")]
    DatasetMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
