use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid plane size {width}x{height}: dimensions must be multiples of {multiple} (replicate-pad at ingestion)")]
    Dimensions {
        width: usize,
        height: usize,
        multiple: usize,
    },

    #[error("malformed bitstream: {0}")]
    Bitstream(String),

    #[error("truncated payload")]
    Truncated,

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("visibility leak: phase {phase} input holds a value at not-yet-coded position ({y}, {x})")]
    VisibilityLeak { phase: u8, y: usize, x: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("image: {0}")]
    Image(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
