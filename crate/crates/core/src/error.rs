use thiserror::Error;

#[derive(Debug, Error)]
pub enum NmcaError {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("parse error in {file} at row {row}, column {col}: {msg}")]
    Parse {
        file: String,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error("ground truth is required but was not provided")]
    MissingGroundTruth,

    #[error("epoch {epoch}: {source}")]
    Training {
        epoch: usize,
        #[source]
        source: Box<NmcaError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NmcaError>;
