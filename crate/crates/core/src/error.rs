use thiserror::Error;

/// Errors produced by the recovery library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("signal length {0} is even; zero-pad to an odd length before lifting")]
    EvenLength(usize),

    #[error("dense path refused for lift dimension {0} (limit {limit})", limit = crate::hankel::DENSE_LIMIT)]
    DenseTooLarge(usize),

    #[error("frequency separation {min_sep} infeasible for r = {r} after {attempts} attempts")]
    SeparationInfeasible { r: usize, min_sep: f64, attempts: usize },

    #[error("truncated SVD did not converge after {iters} iterations (residual {residual:.3e})")]
    SvdNotConverged { iters: usize, residual: f64 },

    #[error("operator is not complex symmetric (probe mismatch {mismatch:.3e})")]
    NotSymmetric { mismatch: f64 },

    #[error("rank {r} exceeds the numerical rank of the lifted data (sigma_r / sigma_1 = {ratio:.3e}); try a smaller rank")]
    RankDeficient { r: usize, ratio: f64 },

    #[error("input columns are not orthonormal (deviation {0:.3e})")]
    NotOrthonormal(f64),

    #[error("alignment matrix drifted to singularity (sigma_min = {0:.3e}); metric is unbounded here")]
    AlignmentUnbounded(f64),

    #[error("reference signal has zero norm")]
    ZeroReference,

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
