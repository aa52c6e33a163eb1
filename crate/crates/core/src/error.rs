use thiserror::Error;

use crate::lp::LpStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Table shapes or index ranges disagree with the declared counts.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("no usable pairs for the chained statistic")]
    EmptyStatistic,

    #[error("LP solve failed ({status:?}): {message} [primal residual {primal_residual:e}, dual residual {dual_residual:e}, gap {duality_gap:e}]")]
    Solver { status: LpStatus, message: String, primal_residual: f64, dual_residual: f64, duality_gap: f64 },

    #[error("malformed box file: {0}")]
    Parse(#[from] serde_json::Error),
}
