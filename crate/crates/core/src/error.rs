use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing label file: {0}")]
    MissingLabelFile(PathBuf),
    #[error("frame count mismatch for {subject} AU{au}: {labels} label rows vs {frames} frames")]
    FrameCountMismatch {
        subject: String,
        au: u8,
        labels: usize,
        frames: usize,
    },
    #[error("label file {path} has no row for frame {frame}")]
    MissingLabelRow { path: PathBuf, frame: u32 },
    #[error("corrupt image {path}: {reason}")]
    CorruptImage { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("too few frames: need at least {need}, got {got}")]
    TooFewFrames { need: usize, got: usize },
    #[error("too few identities: need at least {need}, got {got}")]
    TooFewIdentities { need: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("degenerate landmarks: {0}")]
    DegenerateLandmarks(String),
    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("unknown identity {0:?}")]
    UnknownIdentity(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("sequence too short: {0} frames, need at least 2")]
    SequenceTooShort(usize),
    #[error("degenerate labels for AU{au}: column has a single class")]
    DegenerateLabels { au: u8 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("too few points: need at least {need}, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("one side of the cluster comparison is empty: {0}")]
    EmptySide(&'static str),
    #[error("schema mismatch: field `{field}`: {detail}")]
    SchemaMismatch { field: String, detail: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("bundle format: {0}")]
    BundleFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NonFiniteLoss { .. } | Error::Io(_) | Error::BundleFormat(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
