use thiserror::Error;

use crate::geometry::ManifoldKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point lies outside the tube: |xi| = {norm} >= radius {radius}")]
    OutsideTube { norm: f64, radius: f64 },

    #[error("{0:?} has no spectral basis in this library")]
    NotSpectral(ManifoldKind),

    #[error("argument outside the domain: {0}")]
    OutsideDomain(String),

    #[error("point is within the finite-difference stencil of a chart singularity")]
    ChartSingularity,

    #[error("point is too close to the zero section (|xi| = {norm}, need >= {min})")]
    NearZeroSection { norm: f64, min: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("{count} non-finite integrand values with clipping disabled")]
    NonFinite { count: usize },

    #[error("winding number {value} is not an integer after maximal subdivision")]
    NonIntegerWinding { value: f64 },

    #[error("resolution too coarse: {0}")]
    ResolutionTooCoarse(String),

    #[error("empty quadrature grid")]
    EmptyGrid,
}
