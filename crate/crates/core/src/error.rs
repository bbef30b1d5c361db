use thiserror::Error;

/// Errors raised anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("spin value {value} at cell {cell} outside [-{half}, {half}]")]
    SpinOutOfRange { cell: usize, value: i32, half: i32 },

    #[error("absorption {value} at cell {cell} outside [0, {max}]")]
    AbsorptionOutOfRange { cell: usize, value: f64, max: f64 },

    #[error("Green's function evaluated at coincident points ({x1}, {x2})")]
    CoincidentPoints { x1: f64, x2: f64 },

    #[error("point below the half-space: second coordinate {0} < 0")]
    OutsideDomain(f64),

    #[error("quadrature did not converge: estimate {estimate:e}, error bound {error_bound:e} after {evaluations} evaluations")]
    QuadratureNonConvergence {
        estimate: f64,
        error_bound: f64,
        evaluations: usize,
    },

    #[error("Green's table entry ({row}, {col}): {source}")]
    TableEntry {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("linear solver stalled after {iterations} iterations, relative residual {residual:e}")]
    SolverNonConvergence { iterations: usize, residual: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-positive field value {value:e} for {what}")]
    NonPositive { what: String, value: f64 },

    #[error("noise draw stayed non-positive after {0} attempts")]
    NoiseExhausted(usize),

    #[error("truncation rank {k} outside [1, {max}]")]
    RankOutOfRange { k: usize, max: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed input {path}: {reason}")]
    Parse { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by user input rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::DimensionMismatch(_)
                | Error::RankOutOfRange { .. }
                | Error::SpinOutOfRange { .. }
                | Error::AbsorptionOutOfRange { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
