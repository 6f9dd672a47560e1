use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between tensors/operands.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid model, training, or run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset problems: missing directory, no decodable images, undersized images.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Checkpoint persistence failures, with a distinct kind per failure mode.
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),

    /// Training aborted because the loss left the finite range.
    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: usize, value: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Failure modes of the checkpoint container format.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes (not a checkpoint file)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("manifest/payload mismatch: {0}")]
    PayloadMismatch(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn dataset(msg: impl Into<String>) -> Self {
        Error::Dataset(msg.into())
    }
}
