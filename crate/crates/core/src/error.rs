//! Error type shared by every module of the crate.

use std::path::PathBuf;

use nalgebra::DMatrix;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("agent coincides with {what} (distance {distance:e} m)")]
    CoincidentPoint { what: String, distance: f64 },

    #[error("EMI correlation matrix is not positive semidefinite (value {value:e})")]
    NonPsdEmi { value: f64 },

    /// A Fisher block is singular or too badly conditioned to invert.
    /// The offending block is attached for inspection.
    #[error("degenerate geometry: {block} has condition number {condition:e}")]
    DegenerateGeometry {
        block: &'static str,
        condition: f64,
        matrix: DMatrix<f64>,
    },

    #[error("retraction denominator vanished at element {index} (|w+v| = {modulus:e})")]
    ZeroDenominator { index: usize, modulus: f64 },

    #[error("phase difference {delta} rad at element {index} is outside the inverse-retraction range")]
    OutsideInjectivity { index: usize, delta: f64 },

    #[error("regularized residual matrix is ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("acceleration weights: partial sum {sum:e} at index {index} is too close to zero")]
    WeightSumGuard { index: usize, sum: f64 },

    #[error("search direction is not a descent direction (slope {slope:e})")]
    NotDescent { slope: f64 },

    #[error("line search failed after {backtracks} backtracks")]
    LineSearchFailed { backtracks: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
