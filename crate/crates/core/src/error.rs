use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate segment: endpoints are {distance:.3e} px apart")]
    DegenerateSegment { distance: f64 },

    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("not a rotation: {0}")]
    InvalidFrame(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid SDP problem: {0}")]
    InvalidProblem(String),

    #[error("SDP solver numerical failure: {0}")]
    NumericalFailure(String),

    #[error("rounded vector has a numerically zero leading block (norm {norm:.3e})")]
    DegenerateRounding { norm: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("no consensus in VP iteration {iteration}: best support {best} < {required}")]
    NoConsensus {
        iteration: usize,
        best: usize,
        required: usize,
    },

    #[error("insufficient lines: need at least {required}, got {got}")]
    InsufficientLines { required: usize, got: usize },

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("malformed input: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
