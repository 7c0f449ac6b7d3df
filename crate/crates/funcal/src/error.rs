//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by estimation, calibration, and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two inputs that must agree in shape did not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A pointwise design matrix was numerically singular.
    ///
    /// `t_index` is the zero-based grid index of the offending time point,
    /// `rcond` the reciprocal condition number that fell below the cutoff.
    #[error("singular design matrix at grid index {t_index} (rcond = {rcond:.3e})")]
    SingularMatrix { t_index: usize, rcond: f64 },

    /// An evaluation would overflow the double-precision exponential range.
    #[error("argument out of range: {0}")]
    OutOfRange(String),

    /// The nonlinear calibration solver stopped without meeting the tolerance.
    #[error(
        "calibration solver did not converge: residual {residual:.3e} after {iterations} iterations (tolerance {tolerance:.1e})"
    )]
    NoConvergence {
        residual: f64,
        iterations: usize,
        tolerance: f64,
    },

    /// A curve table or configuration file could not be parsed.
    ///
    /// `row` and `column` are one-based positions inside the file.
    #[error("{path}:{row}:{column}: {message}")]
    Parse {
        path: String,
        row: usize,
        column: usize,
        message: String,
    },

    /// An underlying I/O operation failed.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the command-line interface.
    ///
    /// 1 = usage error, 2 = data error, 3 = numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::DimensionMismatch(_)
            | Error::NonFinite(_)
            | Error::Parse { .. }
            | Error::Io { .. } => 2,
            Error::SingularMatrix { .. } | Error::OutOfRange(_) | Error::NoConvergence { .. } => 3,
        }
    }
}
