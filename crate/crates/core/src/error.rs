use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpcError {
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("resource cap exceeded: {0}")]
    Resource(String),
    #[error("range error: {0}; rerun with more decimal digits")]
    Range(String),
    #[error("degenerate geometry: {0}")]
    Singular(String),
}

pub type Result<T> = std::result::Result<T, QpcError>;
