use thiserror::Error;

/// Errors produced by the model, the filter, the harness and the loaders.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("index out of range: {what} = {index}, limit {limit}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("self-similarity is excluded (row {0} compared with itself)")]
    SelfSimilarity(usize),

    #[error("tie policy {0} cannot produce a single outcome here")]
    InvalidTiePolicy(&'static str),

    #[error("target row {0} has no erased column, nothing to recommend")]
    NoErasedColumn(usize),

    #[error("all {0} trials were skipped (target row never had an erased column)")]
    AllTrialsSkipped(usize),

    #[error("exact enumeration supports n <= 3, got n = {0}")]
    OracleTooLarge(usize),

    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("duplicate rating for user {user}, item {item} at line {line}")]
    DuplicateRating { line: usize, user: u64, item: u64 },

    #[error("rating {rating} outside 1..=5{}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    RatingOutOfRange { line: Option<usize>, rating: i64 },

    #[error("split selects no test pairs (fraction {fraction} of {pairs} ratings)")]
    EmptySplit { fraction: f64, pairs: usize },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParams(msg.into())
}
