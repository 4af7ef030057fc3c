use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("not an LSVD file")]
    BadMagic,

    #[error("not a PHI1 model file")]
    BadModelMagic,

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(u64),

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("non-finite data")]
    NonFinite,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rho out of range: {0} (allowed [0, 1.5])")]
    RhoOutOfRange(f64),

    #[error("svd did not converge after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("rank deficiency: subspace rank below {required}")]
    RankDeficient { required: usize },

    #[error("training diverged at step {step}: L_AVI = {value}")]
    Diverged { step: usize, value: f64 },

    #[error("metadata error: {0}")]
    Meta(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a runtime or
    /// numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::ShapeMismatch(_)
                | Error::DimensionMismatch(_)
                | Error::InvalidArgument(_)
                | Error::RhoOutOfRange(_)
                | Error::NonFinite
        )
    }
}
