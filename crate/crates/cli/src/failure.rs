//! Command failures and their process exit codes.

use std::fmt;

/// 0 success, 1 usage, 2 data, 3 numerical.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Usage = 1,
    Data = 2,
    Numerical = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

pub type CmdResult<T = ()> = Result<T, Failure>;

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self { kind: Kind::Usage, error: anyhow::anyhow!("{msg}") }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self { kind: Kind::Data, error: anyhow::anyhow!("{msg}") }
    }

    pub fn code(&self) -> u8 {
        self.kind as u8
    }
}

impl From<g3singer::Error> for Failure {
    fn from(e: g3singer::Error) -> Self {
        use g3singer::Error as E;
        let kind = match &e {
            E::NonFinite(_) => Kind::Numerical,
            E::InvalidArgument(_) | E::Condition(_) => Kind::Usage,
            _ => Kind::Data,
        };
        Self { kind, error: e.into() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self { kind: Kind::Data, error: e.into() }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self { kind: Kind::Data, error: e.into() }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Self { kind: Kind::Data, error: e.into() }
    }
}

/// Attaches a context line while keeping the failure kind.
pub trait Context<T> {
    fn context(self, what: impl fmt::Display) -> CmdResult<T>;
}

impl<T, E: Into<Failure>> Context<T> for Result<T, E> {
    fn context(self, what: impl fmt::Display) -> CmdResult<T> {
        self.map_err(|e| {
            let f: Failure = e.into();
            Failure { kind: f.kind, error: f.error.context(what.to_string()) }
        })
    }
}
