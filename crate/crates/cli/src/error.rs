//! Failures carry the process exit code they map to.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad flags or configuration.
    Usage,
    /// Missing, unreadable or inconsistent input files.
    Data,
    /// Everything that fails after the inputs were accepted.
    Runtime,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Runtime => 3,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CmdResult<T> = Result<T, Failure>;

pub fn usage<T>(msg: impl fmt::Display) -> CmdResult<T> {
    Err(Failure { kind: Kind::Usage, error: anyhow::anyhow!("{msg}") })
}

pub fn data<T>(msg: impl fmt::Display) -> CmdResult<T> {
    Err(Failure { kind: Kind::Data, error: anyhow::anyhow!("{msg}") })
}

pub trait Classify<T> {
    fn usage_err(self) -> CmdResult<T>;
    fn data_err(self) -> CmdResult<T>;
    fn runtime_err(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage_err(self) -> CmdResult<T> {
        self.map_err(|e| Failure { kind: Kind::Usage, error: e.into() })
    }

    fn data_err(self) -> CmdResult<T> {
        self.map_err(|e| Failure { kind: Kind::Data, error: e.into() })
    }

    fn runtime_err(self) -> CmdResult<T> {
        self.map_err(|e| Failure { kind: Kind::Runtime, error: e.into() })
    }
}
