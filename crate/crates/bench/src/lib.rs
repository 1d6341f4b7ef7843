//! Fixed inputs shared by the benchmarks.

use num_complex::Complex64;
use schottky_core::curve::{hyperelliptic_periods, kp_vectors, HyperellipticCurve, DEFAULT_QUAD_ORDER, REFERENCE_CURVE};
use schottky_core::{CmState, KPVectors, PeriodData, RiemannMatrix};

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// A well-conditioned period matrix of genus `g`: `i (1 + 0.2 J)` plus a small real part.
pub fn period_matrix(g: usize) -> RiemannMatrix {
    let rows = (0..g)
        .map(|i| (0..g).map(|j| if i == j { c(0.1, 1.0) } else { c(0.05, 0.2) }).collect())
        .collect::<Vec<Vec<_>>>();
    RiemannMatrix::from_rows(&rows).expect("positive imaginary part")
}

pub fn point(g: usize) -> Vec<Complex64> {
    (0..g).map(|k| c(0.1 * (k + 1) as f64, -0.05 * k as f64)).collect()
}

pub fn reference() -> (PeriodData, KPVectors) {
    let pd = hyperelliptic_periods(&HyperellipticCurve::real(&REFERENCE_CURVE).expect("valid curve"), DEFAULT_QUAD_ORDER).expect("periods");
    let vecs = kp_vectors(&pd).expect("directions");
    (pd, vecs)
}

pub fn four_body() -> CmState {
    CmState::rational(
        vec![c(-1.6, 0.3), c(-0.5, -0.2), c(0.6, 0.25), c(1.7, -0.1)],
        vec![c(0.1, 0.2), c(-0.15, 0.05), c(0.2, -0.1), c(-0.05, 0.1)],
    )
    .expect("separated particles")
}
