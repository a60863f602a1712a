use thiserror::Error;

/// Errors raised by the library.
///
/// Variants split into two families that callers (the CLI in particular) map
/// to different exit codes: malformed input and numerical failure. See
/// [`Error::is_input_error`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("variable {0} has (numerically) zero norm after projecting out the active set")]
    DegenerateVariable(usize),

    #[error("exact tie between candidates {0} and {1}")]
    Tie(usize, usize),

    #[error("lasso solution is not unique along the path: {0}")]
    NonUniqueSolution(String),

    #[error("more than one variable enters at grid value {0}")]
    SimultaneousEntry(f64),

    #[error("step {step} is out of range for a path of length {len}")]
    StepOutOfRange { step: usize, len: usize },

    #[error("the noise variance is required for this computation")]
    MissingSigma2,

    #[error("accept/reject kept {accepted} of {proposals} proposals, below the minimum of {required}")]
    LowAcceptance {
        accepted: usize,
        proposals: usize,
        required: usize,
    },

    #[error("conditioning sphere is degenerate (radius {0})")]
    DegenerateSphere(f64),

    #[error("observed response violates its own selection event")]
    InfeasibleObservation,

    #[error("no null sample reproduced the observed entrant")]
    InsufficientConditioningSamples,

    #[error("subpath reconstruction failed: {0}")]
    ReconstructionFailure(String),

    #[error("truncation interval is empty or has zero mass")]
    EmptyTruncation,

    #[error("accumulation function integrates to {0}, not 1")]
    AccumulationIntegral(f64),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed or inconsistent input, false for
    /// numerical failures during a computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::StepOutOfRange { .. }
                | Error::MissingSigma2
                | Error::Unsupported(_)
                | Error::AccumulationIntegral(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
