use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("document {doc_id}: missing sidecar {path}")]
    MissingSidecar { doc_id: String, path: PathBuf },

    #[error("document {doc_id}, sentence {sentence}: parse has {leaves} leaves but the sentence has {words} words")]
    LeafCountMismatch {
        doc_id: String,
        sentence: usize,
        leaves: usize,
        words: usize,
    },

    #[error("document {doc_id}: unknown relation label {label:?}")]
    UnknownRelation { doc_id: String, label: String },

    #[error("document {doc_id}: {reason}")]
    InvalidDocument { doc_id: String, reason: String },

    #[error("document {doc_id}: mentions {first:?} and {second:?} in sentence {sentence} cross")]
    CrossingMentions {
        doc_id: String,
        sentence: usize,
        first: (usize, usize),
        second: (usize, usize),
    },

    #[error("document {doc_id}: {tokens} tokens exceed the maximum of {max}")]
    DocumentTooLong {
        doc_id: String,
        tokens: usize,
        max: usize,
    },

    #[error("invalid dependency parse: {0}")]
    DependencyParse(String),

    #[error("invalid bracketed tree: {0}")]
    Bracket(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("malformed model input: {0}")]
    Input(String),

    #[error("encoder error: {0}")]
    Encoder(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error("non-finite loss at step {step} on document {doc_id}")]
    NonFiniteLoss { doc_id: String, step: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
