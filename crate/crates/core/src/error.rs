use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("transition matrix is not ergodic (irreducible and aperiodic)")]
    NotErgodic,

    #[error("state index {state} out of range for {num_states} states")]
    BadState { state: usize, num_states: usize },

    #[error("feature matrix rank deficient after {attempts} attempts (smallest singular value {sigma_min:e})")]
    RankDeficient { attempts: usize, sigma_min: f64 },

    #[error("could not sample a connected graph after {attempts} attempts")]
    GraphGenFailed { attempts: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("mean dynamics matrix is singular")]
    SingularH,

    #[error("symmetric part of the mean dynamics matrix is not negative definite (largest eigenvalue {0:e})")]
    NotNegativeDefinite(f64),

    #[error("stepsize {alpha:e} exceeds the admissible bound {limit:e} for {bound}")]
    StepTooLarge { alpha: f64, limit: f64, bound: &'static str },

    #[error("no bias-averaging horizon K <= {cap} satisfies the contraction condition")]
    HorizonOverflow { cap: u64 },

    #[error("index {index} out of range (length {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("parameters diverged at step {step}")]
    Diverged { step: usize },

    #[error("run {run} failed: {source}")]
    RunFailed { run: usize, source: Box<Error> },

    #[error("constants do not match the experiment: {0}")]
    ConstantsMismatch(String),

    #[error("malformed input: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig { field, reason: reason.into() }
    }
}
