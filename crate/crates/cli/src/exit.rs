use std::fmt;

pub const OK: u8 = 0;
pub const HARD: u8 = 1;
pub const PARTIAL: u8 = 2;
pub const NOT_FOUND: u8 = 3;
pub const USAGE: u8 = 64;

/// An error together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure {
            code: USAGE,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn not_found(msg: impl fmt::Display) -> Self {
        Failure {
            code: NOT_FOUND,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn hard(msg: impl fmt::Display) -> Self {
        Failure {
            code: HARD,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: HARD,
            error: e.into(),
        }
    }
}

pub type CmdResult = Result<u8, Failure>;
