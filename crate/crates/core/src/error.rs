use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in layer `{layer}`")]
    NonFinite { layer: String },

    #[error("non-finite update at step {step} (max |g| = {max_abs_grad})")]
    NonFiniteUpdate { step: u64, max_abs_grad: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("target epsilon {target} is unreachable for noise in [{lo}, {hi}]")]
    CalibrationOutOfRange { target: f64, lo: f64, hi: f64 },

    #[error("privacy budget exhausted: epsilon {spent} would exceed cap {cap}")]
    BudgetExhausted { spent: f64, cap: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::NonFiniteUpdate { .. } => "non_finite_update",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UnknownStrategy { .. } => "unknown_strategy",
            Error::CalibrationOutOfRange { .. } => "calibration_out_of_range",
            Error::BudgetExhausted { .. } => "budget_exhausted",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
