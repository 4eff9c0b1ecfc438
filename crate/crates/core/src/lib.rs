//! Holomorphic continuation of Laplace eigenfunctions into Grauert tubes of
//! the circle, flat tori and the round sphere, together with the analytic
//! quantities needed to study the distribution of their complex zeros.

pub mod currents;
pub mod error;
pub mod geometry;
pub mod quadrature;
pub mod randombasis;
pub mod scaled;
pub mod spectral;
pub mod zeros;

pub use error::{Error, Result};
pub use geometry::{ComplexPoint, ManifoldKind, ModelManifold, TubePoint};
pub use scaled::ScaledComplex;
pub use quadrature::{PairingResult, QuadratureGrid};
pub use spectral::{ClusterBasis, EigenfunctionSpec};
pub use zeros::{Geodesic, Rect, ZeroList};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
