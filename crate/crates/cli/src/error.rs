//! Failures and their exit codes.

use mmlm_core::CoreError;
use mmlm_corpus::CorpusError;
use mmlm_eval::EvalError;
use mmlm_numerics::NumericsError;
use std::fmt;

pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const NUMERIC: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { code: USAGE, msg: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self { code: DATA, msg: msg.into() }
    }

    /// Prefixes the message with where it happened.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.msg = format!("{what}: {}", self.msg);
        self
    }

    /// The single stderr line: `ERROR <code>: <message>`, with any line
    /// breaks in the message flattened.
    pub fn line(&self) -> String {
        let flat: Vec<&str> = self.msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        format!("ERROR {}: {}", self.code, flat.join(" "))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

fn numerics_code(e: &NumericsError) -> u8 {
    match e {
        NumericsError::Io(_) => DATA,
        _ => NUMERIC,
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::Numerics(n) => numerics_code(n),
            CoreError::NonFiniteLoss { .. } => NUMERIC,
            CoreError::Config(_) | CoreError::UnknownKey(_) => USAGE,
            _ => DATA,
        };
        Self { code, msg: e.to_string() }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Core(c) => c.into(),
            EvalError::Usage(m) => Self::usage(m),
            other => Self::data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

pub type Outcome<T = ()> = std::result::Result<T, Failure>;
