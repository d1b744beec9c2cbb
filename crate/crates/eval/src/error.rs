use mmlm_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{which}: missing value for hole `{{{hole}}}`")]
    MissingHole { hole: String, which: String },
    #[error("template has no hole `{{{0}}}`")]
    UnknownHole(String),
    #[error("{0}")]
    InvalidExample(String),
    #[error("duplicate option name {0:?}")]
    DuplicateOption(String),
    #[error("ROC AUC needs both positive and negative labels")]
    SingleClass,
    #[error("line {line}: {msg}")]
    Input { line: usize, msg: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;
