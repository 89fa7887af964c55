use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("node id {node} out of range for a graph with {num_nodes} nodes")]
    NodeOutOfRange { node: u64, num_nodes: usize },

    #[error("cannot sample {count} nodes from a graph with {num_nodes} nodes")]
    SampleTooLarge { count: usize, num_nodes: usize },

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("invalid pipeline: {0}")]
    Pipeline(String),

    #[error("fifo protocol violation: {0}")]
    Protocol(String),

    #[error("pipeline deadlock: {0}")]
    Deadlock(String),

    #[error("invalid tensor file: {0}")]
    Format(String),

    #[error("empty trace: {0}")]
    EmptyTrace(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
