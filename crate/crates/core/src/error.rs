use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },
    #[error("invalid propensity {value} at sample {index}")]
    InvalidPropensity { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("action {action} out of range for {n_actions} actions")]
    ActionOutOfRange { action: usize, n_actions: usize },
    #[error("non-binary reward {value} at sample {index}")]
    NonBinaryReward { index: usize, value: f64 },
    #[error("value {value} outside [0, {upper}] at index {index}")]
    OutOfRange {
        index: usize,
        value: f64,
        upper: f64,
    },
    #[error("fold leakage: S1 and S2 share {shared} samples")]
    FoldLeakage { shared: usize },
    #[error("stage data too small: S2 fold has {size} samples, need at least {minimum}")]
    StageDataTooSmall { size: usize, minimum: usize },
    #[error("missing deployment stage {0}")]
    MissingStage(usize),
    #[error("no novel actions available")]
    NoNovelActions,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}
