use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("rank {q} out of range (maximum {max})")]
    RankOutOfRange { q: usize, max: usize },
    #[error("negative entry {value} at ({row}, {col}) in a nonnegative input")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("time {t} outside the training grid [{min}, {max}]")]
    TimeOutOfRange { t: f64, min: f64, max: f64 },
    #[error("Cholesky factorization failed at jitter {jitter:e} (condition estimate {condition:e})")]
    Factorization { jitter: f64, condition: f64 },
    #[error("parameter vectors {0} and {1} coincide but map to different proxy parameters")]
    ConflictingParams(usize, usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("run {run}: {cause}")]
    InRun { run: usize, cause: alloc::boxed::Box<Error> },
}

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Domain,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_)
            | Error::DimensionMismatch { .. }
            | Error::NonFinite(_)
            | Error::RankOutOfRange { .. }
            | Error::NegativeEntry { .. }
            | Error::ConflictingParams(..) => ErrorKind::Input,
            Error::TimeOutOfRange { .. } => ErrorKind::Domain,
            Error::Factorization { .. } | Error::Numerical(_) => ErrorKind::Numerical,
            Error::InRun { cause, .. } => cause.kind(),
        }
    }

    pub fn in_run(self, run: usize) -> Self {
        Error::InRun { run, cause: alloc::boxed::Box::new(self) }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
