//! Weierstrass elliptic functions by row-summed lattice series.
//!
//! For the normalized lattice `Z + tau Z` the Eisenstein-summed series is
//! regrouped by rows: `p(z) = -G + sum_m pi^2 csc^2(pi (z + m tau))`, where the
//! constant `G` collects the subtracted `1/w^2` lattice terms. Each row
//! decays like `exp(-2 pi |m| Im tau)`, so a few dozen rows suffice.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::PI;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Period lattice generated by `2 omega1` and `2 omega2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    two_omega1: Complex64,
    two_omega2: Complex64,
}

impl Lattice {
    pub fn new(two_omega1: Complex64, two_omega2: Complex64) -> Result<Self> {
        if two_omega1.norm() == 0.0 || (two_omega2 / two_omega1).im <= 0.0 {
            return Err(Error::Domain("lattice generators must satisfy Im(omega2/omega1) > 0".into()));
        }
        Ok(Self { two_omega1, two_omega2 })
    }

    /// The lattice `Z + tau Z`.
    pub fn normalized(tau: Complex64) -> Result<Self> {
        Self::new(Complex64::new(1.0, 0.0), tau)
    }

    pub fn tau(&self) -> Complex64 {
        self.two_omega2 / self.two_omega1
    }

    pub fn periods(&self) -> (Complex64, Complex64) {
        (self.two_omega1, self.two_omega2)
    }

    /// `(p(w), p'(w))`.
    pub fn wp(&self, w: Complex64) -> Result<(Complex64, Complex64)> {
        let tau = self.tau();
        let s = self.two_omega1;
        let (p, dp) = wp_normalized(w / s, tau, s.norm())?;
        Ok((p / (s * s), dp / (s * s * s)))
    }

    /// Invariants `(g2, g3)` from the Eisenstein series `E4`, `E6`.
    pub fn invariants(&self) -> (Complex64, Complex64) {
        let tau = self.tau();
        let s = self.two_omega1;
        let g2 = eisenstein(tau, 4) * (4.0 * PI.powi(4) / 3.0) / s.powu(4);
        let g3 = eisenstein(tau, 6) * (8.0 * PI.powi(6) / 27.0) / s.powu(6);
        (g2, g3)
    }
}

fn rows_needed(tau: Complex64) -> i64 {
    ((42.0 / (2.0 * PI * tau.im)).ceil() as i64 + 2).min(100_000)
}

/// `(pi^2 csc^2(pi z), d/dz of it)`, evaluated through `q = exp(2 pi i z)` so
/// rows far from the real axis neither overflow nor cancel.
fn csc2_row(z: Complex64) -> (Complex64, Complex64) {
    let (zz, sign) = if z.im >= 0.0 { (z, 1.0) } else { (-z, -1.0) };
    let q = (I * 2.0 * PI * zz).exp();
    let one = Complex64::new(1.0, 0.0);
    let csc2 = -q * 4.0 / ((one - q) * (one - q));
    let cot = I * (q + one) / (q - one);
    let val = csc2 * PI * PI;
    // d/dz pi^2 csc^2(pi z) = -2 pi^3 cot csc^2, odd in z
    let der = -cot * csc2 * 2.0 * PI.powi(3) * sign;
    (val, der)
}

fn wp_normalized(w: Complex64, tau: Complex64, unit: f64) -> Result<(Complex64, Complex64)> {
    // reduce to the fundamental cell around the origin
    let b = (w.im / tau.im).round();
    let w1 = w - tau * b;
    let a = w1.re.round();
    let z = w1 - a;
    if z.norm() * unit < 1e-12 {
        return Err(Error::Pole(w));
    }
    let m_max = rows_needed(tau);
    let mut p = Complex64::new(-PI * PI / 3.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    let (v0, d0) = csc2_row(z);
    p += v0;
    dp += d0;
    for m in 1..=m_max {
        let mt = tau * m as f64;
        let (vp, dpp) = csc2_row(z + mt);
        let (vm, dpm) = csc2_row(z - mt);
        let (c, _) = csc2_row(mt);
        p += vp + vm - c * 2.0;
        dp += dpp + dpm;
    }
    Ok((p, dp))
}

fn divisor_sum(n: u64, k: u32) -> f64 {
    (1..=n).filter(|d| n.is_multiple_of(*d)).map(|d| (d as f64).powi(k as i32)).sum()
}

/// Normalized Eisenstein series `E2`, `E4` or `E6` at `tau`.
pub fn eisenstein(tau: Complex64, weight: u32) -> Complex64 {
    let (c, k) = match weight {
        2 => (-24.0, 1),
        4 => (240.0, 3),
        6 => (-504.0, 5),
        _ => panic!("unsupported Eisenstein weight {weight}"),
    };
    let q = (I * 2.0 * PI * tau).exp();
    let mut sum = Complex64::new(0.0, 0.0);
    let mut qn = q;
    for n in 1..2000u64 {
        let t = qn * divisor_sum(n, k);
        sum += t;
        if t.norm() < 1e-18 * sum.norm().max(1.0) && n > 3 {
            break;
        }
        qn *= q;
    }
    Complex64::new(1.0, 0.0) + sum * c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn parity() {
        let l = Lattice::normalized(c(0.2, 1.1)).unwrap();
        let w = c(0.31, 0.17);
        let (p, dp) = l.wp(w).unwrap();
        let (pm, dpm) = l.wp(-w).unwrap();
        assert!((p - pm).norm() < 1e-10 * p.norm());
        assert!((dp + dpm).norm() < 1e-10 * dp.norm());
    }

    #[test]
    fn differential_equation() {
        for tau in [c(0.0, 1.0), c(0.3, 0.8), c(-0.45, 1.7)] {
            let l = Lattice::new(c(1.3, 0.2), c(1.3, 0.2) * tau).unwrap();
            let (g2, g3) = l.invariants();
            for w in [c(0.21, 0.1), c(-0.4, 0.33), c(0.05, -0.02)] {
                let (p, dp) = l.wp(w).unwrap();
                let rhs = p * p * p * 4.0 - g2 * p - g3;
                assert!((dp * dp - rhs).norm() < 1e-9 * rhs.norm().max(dp.norm_sqr()));
            }
        }
    }

    #[test]
    fn periodicity() {
        let l = Lattice::new(c(2.0, 0.0), c(0.4, 1.5)).unwrap();
        let w = c(0.7, 0.2);
        let (p, _) = l.wp(w).unwrap();
        let (p1, _) = l.wp(w + c(2.0, 0.0)).unwrap();
        let (p2, _) = l.wp(w + c(0.4, 1.5)).unwrap();
        assert!((p - p1).norm() < 1e-10 * p.norm());
        assert!((p - p2).norm() < 1e-10 * p.norm());
    }

    #[test]
    fn pole_is_rejected() {
        let l = Lattice::normalized(c(0.0, 1.0)).unwrap();
        assert!(matches!(l.wp(c(1.0, 1.0)), Err(Error::Pole(_))));
    }

    #[test]
    fn laurent_leading_term() {
        let l = Lattice::normalized(c(0.1, 1.2)).unwrap();
        let w = c(1e-3, 5e-4);
        let (p, dp) = l.wp(w).unwrap();
        assert!((p * w * w - 1.0).norm() < 1e-6);
        assert!((dp * w * w * w + 2.0).norm() < 1e-6);
    }
}
