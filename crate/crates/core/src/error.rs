use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: String,
        got: String,
    },

    #[error("time {t} outside [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("outside the domain: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Riccati blow-up at node {node} (t = {t}): smallest eigenvalue {min_eig:e} of the control weight fell below {threshold:e}")]
    RiccatiBlowUp {
        node: usize,
        t: f64,
        min_eig: f64,
        threshold: f64,
    },

    #[error("at switch time r = {r}: {source}")]
    AtSwitchTime { r: f64, source: Box<Error> },

    #[error("non-finite value on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },
}

impl Error {
    pub(crate) fn dim(what: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            what: what.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn at_switch(self, r: f64) -> Self {
        match self {
            e @ Error::AtSwitchTime { .. } => e,
            e => Error::AtSwitchTime {
                r,
                source: Box::new(e),
            },
        }
    }
}
