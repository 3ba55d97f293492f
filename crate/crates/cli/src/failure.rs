//! Command failures and their exit codes.

use std::fmt;

/// Exit code 1: the invocation itself is wrong.
/// Exit code 2: the inputs could not be read or used.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

pub fn usage(message: impl Into<String>) -> Failure {
    Failure::Usage(message.into())
}

pub fn data(message: impl Into<String>) -> Failure {
    Failure::Data(message.into())
}

/// Any library error reached while processing inputs is a data error.
pub trait OrData<T> {
    fn or_data(self) -> Result<T, Failure>;
    fn or_data_ctx(self, context: &str) -> Result<T, Failure>;
}

impl<T, E: fmt::Display> OrData<T> for Result<T, E> {
    fn or_data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.to_string()))
    }

    fn or_data_ctx(self, context: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(format!("{context}: {e}")))
    }
}
