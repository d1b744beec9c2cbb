use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Input { line: usize, msg: String },
    #[error("not a corpus archive (bad magic)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    UnknownVersion(u32),
    #[error("archive header truncated")]
    TruncatedHeader,
    #[error("record {record}: truncated")]
    Truncated { record: u64 },
    #[error("record {record}: checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { record: u64, stored: u32, computed: u32 },
    #[error("record {record}: {msg}")]
    Malformed { record: u64, msg: String },
    #[error("trailing bytes after {0} records")]
    Trailing(u64),
}

pub type Result<T> = std::result::Result<T, CorpusError>;
