use thiserror::Error;

/// Errors surfaced by tensor math, pooling, data handling and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("loss tensor must be a scalar, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),

    #[error("loss tensor was not recorded on this tape")]
    DetachedLoss,

    #[error("function returned a non-finite value during finite differencing")]
    NonFiniteFunctionValue,

    #[error("pooling window {filter} exceeds input extent {extent}")]
    WindowLargerThanInput { filter: usize, extent: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("box has zero area")]
    EmptyBox,

    #[error("image {h}x{w} is too small for proposal generation (minimum 16x16)")]
    ImageTooSmall { h: usize, w: usize },

    #[error("proposal at index {0} has no score")]
    UnscoredProposal(usize),

    #[error("detection at index {0} has no score")]
    UnscoredDetection(usize),

    #[error("bad magic in {0}")]
    BadMagic(String),

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("inconsistent modality dimensions: {0}")]
    InconsistentDims(String),

    #[error("modality {0} not present in volume (and no fallback applies)")]
    MissingModality(String),

    #[error("mask domains disagree: {0}")]
    DomainMismatch(String),

    #[error("dataset not found at {0}")]
    DatasetMissing(String),

    #[error("training loss diverged at iteration {iteration}: {value}")]
    DivergedLoss { iteration: usize, value: f64 },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("bad config: {0}")]
    BadConfig(String),

    #[error("empty modality subset")]
    BadSubset,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
