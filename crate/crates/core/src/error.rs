//! Crate error type.

use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A malformed input line (TSV triples), with its 1-based line number.
    Parse { line: usize, message: String },
    /// Shape-incompatible tensor operation; names the offending op.
    Shape { op: &'static str, detail: String },
    /// Invalid configuration value.
    Config(String),
    /// Training diverged or could not proceed.
    Train(String),
}

impl Error {
    pub fn shape(op: &'static str, detail: String) -> Self {
        Error::Shape { op, detail }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn train(msg: impl Into<String>) -> Self {
        Error::Train(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::Shape { op, detail } => write!(f, "shape error in `{op}`: {detail}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Train(msg) => write!(f, "training error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
