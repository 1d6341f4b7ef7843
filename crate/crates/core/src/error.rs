use num_complex::Complex64;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("truncation radius {radius:.3} exceeds cap {cap:.3}")]
    TruncationInfeasible { radius: f64, cap: f64 },

    #[error("derivative order {0} unsupported (max 8)")]
    UnsupportedOrder(usize),

    #[error("point {0} lies on the period lattice")]
    Pole(Complex64),

    #[error("|theta| = {value:.3e} below floor {floor:.3e} near the divisor")]
    NearDivisor { value: f64, floor: f64 },

    #[error("quadrature did not converge: estimate {estimate:.3e}")]
    Precision { estimate: f64 },

    #[error("no candidate convention reached residual below {threshold:.1e}; tried {tried}")]
    Convention { threshold: f64, tried: String },

    #[error("integration path passes within {distance:.3e} of a branch point")]
    Path { distance: f64 },

    #[error("particles {i} and {j} collide (distance {distance:.3e})")]
    Collision { i: usize, j: usize, distance: f64 },

    #[error("singular locus reached at y = {y}: |tau_x| = {tau_x:.3e}")]
    SingularLocus { y: Complex64, tau_x: f64 },

    #[error("leading Laurent coefficient {0} is not 2")]
    NotCmPole(Complex64),

    #[error("nonzero residues block integration: {residues:?}")]
    Obstruction { residues: Vec<(Complex64, Complex64)> },

    #[error("poles {a} and {b} closer than the degeneracy floor")]
    Degeneracy { a: Complex64, b: Complex64 },

    #[error("operator truncation too shallow: exponent {needed} requested, bottom is {bottom}")]
    Truncation { needed: i32, bottom: i32 },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("all level-two theta constants vanish")]
    DegenerateSystem,

    #[error("step size underflow at y = {0}")]
    StepUnderflow(Complex64),
}
