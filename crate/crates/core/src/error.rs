use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid node {node}: model has {num_nodes} nodes")]
    InvalidNode { node: usize, num_nodes: usize },
    #[error("degenerate coefficient row: every entry is <= 0")]
    DegenerateRow,
    #[error("sequence {index} has zero likelihood under every component")]
    ZeroLikelihood { index: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
