use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inadmissible model: {0}")]
    InadmissibleModel(ValidationReport),

    #[error("box half-width {half_width} is smaller than the kernel support radius {radius}")]
    BoxTooSmall { half_width: usize, radius: usize },

    #[error("eigen-iteration did not converge after {iterations} iterations (residual {residual:e})")]
    EigenNoConvergence { iterations: usize, residual: f64 },

    #[error("linear solve failed: {0}")]
    SingularSolve(String),

    #[error("principal eigenvalue does not change sign on [{lo}, {hi}]")]
    NotBracketed { lo: f64, hi: f64 },

    #[error("integrator step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("integrator exceeded {max_steps} steps before t = {t}")]
    TooManySteps { max_steps: usize, t: f64 },

    #[error("generating function value {value} left [0, 1] at t = {t}")]
    OutOfRange { t: f64, value: f64 },

    #[error("time grid unsuitable: {0}")]
    GridTooCoarse(String),

    #[error("particle cap of {cap} exceeded")]
    ParticleCap { cap: usize },

    #[error("particle cap exceeded in {capped} of {replicas} replicas")]
    CapAbort { capped: usize, replicas: usize },

    #[error("particle system is empty")]
    EmptySystem,

    #[error("series value {value} at index {index} is not strictly positive")]
    NonPositiveSeries { index: usize, value: f64 },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
