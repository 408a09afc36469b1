use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("height mismatch: expected {expected}, found {found}")]
    HeightMismatch { expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate offset: {0}")]
    DegenerateOffset(String),
    #[error("sequence too short for labels: {frames} frames, {required} required")]
    SequenceTooShort { frames: usize, required: usize },
    #[error("input too small: {what} is {found}, minimum is {minimum}")]
    InputTooSmall {
        what: &'static str,
        found: usize,
        minimum: usize,
    },
    #[error("backward called without a preceding forward pass")]
    BackwardWithoutForward,
    #[error("unknown layer {name:?}; valid names: {valid}")]
    UnknownLayer { name: String, valid: String },
    #[error("not a checkpoint (bad magic bytes)")]
    NotACheckpoint,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint shape mismatch for {name}: {detail}")]
    CheckpointShape { name: String, detail: String },
    #[error("checkpoint truncated: {0}")]
    CheckpointTruncated(String),
    #[error("glyph atlas not separable after {attempts} attempts; raise alphabet size or glyph area")]
    AtlasNotSeparable { attempts: usize },
    #[error("label {label} out of alphabet of size {alphabet}")]
    LabelOutOfAlphabet { label: usize, alphabet: usize },
    #[error("epoch exhausted after {emitted} samples")]
    EpochExhausted { emitted: usize },
    #[error("length mismatch: {refs} references vs {hyps} hypotheses")]
    LengthMismatch { refs: usize, hyps: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("non-finite loss at stage {stage} step {step} (batch seed {batch_seed})")]
    NonFiniteLoss {
        stage: usize,
        step: usize,
        batch_seed: u64,
    },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status: 1 usage/config, 2 data, 3 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::UnknownLayer { .. } => 1,
            Error::Verification(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
