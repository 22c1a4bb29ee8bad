use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),

    #[error("unknown document id `{0}`")]
    UnknownDocument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: String,
        found: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing entity embeddings for: {}", .0.join(", "))]
    MissingEntities(Vec<String>),

    #[error("query `{0}` has no linked entities; fall back to the query-relevant set")]
    NoQueryEntities(String),

    #[error("every document position is masked; cannot attend")]
    AllMasked,

    #[error("fold {0} has no positive examples")]
    FoldWithoutPositives(usize),

    #[error("fold {0} has no validation queries")]
    EmptyFold(usize),

    #[error("invalid label {0}; labels must be 0 or 1")]
    InvalidLabel(i64),

    #[error("non-finite loss on example {query_id}/{doc_id}: score {score}")]
    NonFiniteLoss {
        query_id: String,
        doc_id: String,
        score: f64,
    },

    #[error("difficulty binning needs at least 5 queries, got {0}")]
    TooFewQueries(usize),

    #[error("query `{0}` retrieves no documents")]
    NoMatchingDocuments(String),

    #[error("corrupt binary artifact: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for errors caused by bad user input or configuration rather than
    /// internal failures.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::NonFiniteLoss { .. })
    }
}
