use thiserror::Error;

/// Errors raised by the sequence, oracle, sampling and training layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("embedding count exceeds the 64-bit range")]
    Overflow,
    #[error("{what} {index} out of range (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("token {0} is not a clean vocabulary token")]
    InvalidToken(u32),
    #[error("clean sequence contains a mask token")]
    MaskInClean,
    #[error("position {0} is not masked")]
    NotMasked(usize),
    #[error("sequence has no masked position")]
    NoMask,
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("quadrature failed to converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },
    #[error("state unreachable: no atom of the target embeds it")]
    Unreachable,
    #[error("empty support")]
    EmptySupport,
    #[error("negative or non-finite weight {0}")]
    BadWeight(f64),
    #[error("atoms disagree on the clamped prefix")]
    ClampMismatch,
    #[error("state space exceeds the cap of {cap} states")]
    StateCap { cap: usize },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
