use thiserror::Error;

/// Errors surfaced by the segmentation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("label mask contains no foreground voxels")]
    EmptyMask,

    #[error("zero intensity variance inside the bounding boxes; cannot normalize")]
    ZeroVariance,

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid network topology: {0}")]
    InvalidTopology(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("empty {0} region; target update is degenerate")]
    EmptyRegion(&'static str),

    #[error("need at least {needed} distinct samples to fit {needed} components, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("cannot split {n} subjects into {k} folds")]
    BadFoldCount { n: usize, k: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {file}: {msg}")]
    Parse { file: String, msg: String },

    #[error("phantom object does not fit inside the volume with the required margin: {0}")]
    ShapeDoesNotFit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
