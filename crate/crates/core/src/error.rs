use std::io;

use thiserror::Error;

/// Errors raised across the toolkit. Each variant maps to one CLI exit class.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("state error: {0}")]
    State(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::State(_) => 1,
            Error::Format(_) | Error::Io(_) => 2,
            Error::Shape(_) | Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(format!($($arg)*)) };
}
macro_rules! format_err {
    ($($arg:tt)*) => { $crate::error::Error::Format(format!($($arg)*)) };
}
pub(crate) use format_err;
pub(crate) use shape_err;
pub(crate) use usage_err;
