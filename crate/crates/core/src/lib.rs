//! Numerical tools for the Riemann–Schottky problem.
//!
//! Theta functions with certified truncation, period data of hyperelliptic
//! curves, complex Calogero–Moser dynamics, exact rational wave series with
//! pseudo-differential operator algebra, and normalized residuals of the
//! Jacobian criteria built on top of them.

pub mod cm;
pub mod curve;
pub mod detect;
pub mod error;
pub mod quad;
pub mod series;
pub mod theta;
pub mod waves;
pub mod weierstrass;

pub use cm::{CmKind, CmState, LaurentData, Trajectory, ZeroTrajectory};
pub use curve::{HyperellipticCurve, KPVectors, PeriodData};
pub use detect::{DivisorSample, ResidualReport};
pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use theta::{Characteristic, DerivativeSpec, RiemannMatrix, Truncation};
pub use waves::{PsiDO, RationalFunction, WaveSeries};
pub use weierstrass::Lattice;
