use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("non-finite value in vector {id:?}")]
    NonFiniteVector { id: String },

    #[error("malformed index file at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("truncated index file at byte offset {offset}: expected {expected} bytes, found {actual}")]
    Truncated {
        offset: u64,
        expected: u64,
        actual: u64,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("no re-ranker score for query {query_id:?}, document {doc_id:?}")]
    MissingScore { query_id: String, doc_id: String },

    #[error("non-finite loss or gradient at distillation step {step}")]
    NonFinite { step: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "synthetic benchmark outside difficulty band: baseline recall@100 {recall:.4} not in [{lo}, {hi}]"
    )]
    InfeasibleBand { recall: f64, lo: f64, hi: f64 },

    #[error("{0}")]
    Io(#[from] io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}
