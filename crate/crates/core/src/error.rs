use mmlm_numerics::NumericsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("token id {0} is reserved and has no text form")]
    ReservedToken(u32),
    #[error("token id {id} is outside the vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("decoded bytes are not valid UTF-8")]
    InvalidUtf8,
    #[error("document has no segments")]
    EmptyDocument,
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("image of {height}×{width} pixels is not divisible into {patch}-pixel patches")]
    NotDivisible { height: usize, width: usize, patch: usize },
    #[error("unit {unit} has an unsplittable span of {span} positions, longer than the sequence length {len}")]
    SpanTooLong { unit: usize, span: usize, len: usize },
    #[error("instruction output must not be empty")]
    EmptyOutput,
    #[error("sequence of {len} positions exceeds the maximum length {max}")]
    TooLong { len: usize, max: usize },
    #[error("{slots} image slots but {groups} soft-token groups")]
    SlotMismatch { slots: usize, groups: usize },
    #[error("resampler needs at least one patch")]
    NoPatches,
    #[error("label set is empty")]
    EmptyLabels,
    #[error("label {0:?} has no tokens")]
    UntokenizableLabel(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("bad dataset file: {0}")]
    Format(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("no sequences for source `{0}` but its quota is positive")]
    EmptySource(&'static str),
    #[error("step {step} out of range 0..={total}")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("non-finite loss at step {step} (batch {fingerprint})")]
    NonFiniteLoss { step: u64, fingerprint: String },
}

pub type Result<T> = std::result::Result<T, CoreError>;
