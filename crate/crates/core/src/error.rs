use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DsrError>;

#[derive(Debug, Error)]
pub enum DsrError {
    #[error("utterance too short: {samples} samples, need at least {window}")]
    UtteranceTooShort { samples: usize, window: usize },

    #[error("invalid frame config: {0}")]
    FrameConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("empty alignment")]
    EmptyAlignment,

    #[error("unknown phoneme symbol `{symbol}` at line {line}")]
    UnknownPhoneme { symbol: String, line: usize },

    #[error("non-positive duration `{value}` at line {line}")]
    NonPositiveDuration { value: String, line: usize },

    #[error("malformed alignment line {line}: {reason}")]
    MalformedAlignment { line: usize, reason: String },

    #[error("frame-count mismatch: alignment covers {alignment} frames, utterance has {utterance}")]
    FrameCountMismatch { alignment: usize, utterance: usize },

    #[error("decode runaway: exceeded {max_len} decoder steps")]
    DecodeRunaway { max_len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("manifest validation failed: {0}")]
    Manifest(String),

    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint checksum failure in {0}")]
    ChecksumFailure(String),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("frozen parameters changed: {0}")]
    FrozenViolation(String),

    #[error("incomplete system bundle: {0}")]
    IncompleteBundle(String),

    #[error("non-finite loss in `{stage}` at step {step}")]
    Diverged { stage: String, step: u64 },

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
