//! Truncated multivariate Taylor series in a handful of variables.
//!
//! Used to carry directional jets of theta and of `ln theta` around a
//! base point, so that mixed partials of `u = -2 d^2 ln theta` come out of
//! a single lattice sum.

use num_complex::Complex64;
use std::sync::Arc;

/// Monomial table for `nvars` variables up to total degree `order`.
#[derive(Debug, PartialEq, Eq)]
pub struct Monomials {
    nvars: usize,
    order: usize,
    exps: Vec<Vec<usize>>,
    lookup: Vec<usize>,
    products: Vec<(usize, usize, usize)>,
}

impl Monomials {
    pub fn new(nvars: usize, order: usize) -> Self {
        let mut exps = Vec::new();
        let mut cur = vec![0; nvars];
        fn rec(k: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if k == cur.len() {
                out.push(cur.clone());
                return;
            }
            for e in 0..=left {
                cur[k] = e;
                rec(k + 1, left - e, cur, out);
            }
            cur[k] = 0;
        }
        rec(0, order, &mut cur, &mut exps);
        exps.sort_by_key(|e| e.iter().sum::<usize>());
        let base = order + 1;
        let key = |e: &[usize]| e.iter().rev().fold(0, |acc, &x| acc * base + x);
        let mut lookup = vec![usize::MAX; base.pow(nvars as u32)];
        for (i, e) in exps.iter().enumerate() {
            lookup[key(e)] = i;
        }
        let mut products = Vec::new();
        let mut buf = vec![0; nvars];
        for (i, ei) in exps.iter().enumerate() {
            for (j, ej) in exps.iter().enumerate() {
                if ei.iter().sum::<usize>() + ej.iter().sum::<usize>() > order {
                    continue;
                }
                for k in 0..nvars {
                    buf[k] = ei[k] + ej[k];
                }
                products.push((i, j, lookup[key(&buf)]));
            }
        }
        Self { nvars, order, exps, lookup, products }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn exponents(&self, idx: usize) -> &[usize] {
        &self.exps[idx]
    }

    pub fn index_of(&self, exps: &[usize]) -> Option<usize> {
        if exps.len() != self.nvars || exps.iter().sum::<usize>() > self.order {
            return None;
        }
        let base = self.order + 1;
        let key = exps.iter().rev().fold(0, |acc, &x| acc * base + x);
        Some(self.lookup[key])
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> usize {
        self.order
    }
}

#[derive(Debug, Clone)]
pub struct TaylorSeries {
    mono: Arc<Monomials>,
    coeffs: Vec<Complex64>,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl TaylorSeries {
    pub fn zeros(mono: Arc<Monomials>) -> Self {
        let n = mono.len();
        Self { mono, coeffs: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn from_coeffs(mono: Arc<Monomials>, coeffs: Vec<Complex64>) -> Self {
        assert_eq!(mono.len(), coeffs.len());
        Self { mono, coeffs }
    }

    pub fn monomials(&self) -> &Arc<Monomials> {
        &self.mono
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn constant(&self) -> Complex64 {
        self.coeffs[0]
    }

    /// Taylor coefficient of the monomial with the given exponents.
    pub fn coeff(&self, exps: &[usize]) -> Complex64 {
        self.mono
            .index_of(exps)
            .map(|i| self.coeffs[i])
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    /// Partial derivative at the base point: coefficient times the product of factorials.
    pub fn derivative(&self, exps: &[usize]) -> Complex64 {
        let scale: f64 = exps.iter().map(|&e| factorial(e)).product();
        self.coeff(exps) * scale
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = vec![Complex64::new(0.0, 0.0); self.mono.len()];
        for &(i, j, k) in &self.mono.products {
            out[k] += self.coeffs[i] * other.coeffs[j];
        }
        Self { mono: self.mono.clone(), coeffs: out }
    }

    /// Natural logarithm; the constant term must be nonzero.
    pub fn ln(&self) -> Self {
        let c0 = self.constant();
        let mut h = self.clone();
        for c in h.coeffs.iter_mut() {
            *c /= c0;
        }
        h.coeffs[0] = Complex64::new(0.0, 0.0);
        let mut acc = Self::zeros(self.mono.clone());
        let mut pow = h.clone();
        for n in 1..=self.mono.order() {
            let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
            for (a, p) in acc.coeffs.iter_mut().zip(&pow.coeffs) {
                *a += p * (sign / n as f64);
            }
            if n < self.mono.order() {
                pow = pow.mul(&h);
            }
        }
        acc.coeffs[0] = c0.ln();
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_count() {
        assert_eq!(Monomials::new(3, 6).len(), 84);
        assert_eq!(Monomials::new(2, 4).len(), 15);
        assert_eq!(Monomials::new(1, 0).len(), 1);
    }

    #[test]
    fn log_of_exponential_series() {
        // exp(a x + b y) has ln equal to a x + b y.
        let m = Arc::new(Monomials::new(2, 5));
        let a = Complex64::new(0.3, -0.2);
        let b = Complex64::new(-1.1, 0.4);
        let mut s = TaylorSeries::zeros(m.clone());
        for i in 0..m.len() {
            let e = m.exponents(i);
            s.coeffs[i] = a.powu(e[0] as u32) * b.powu(e[1] as u32) / (factorial(e[0]) * factorial(e[1]));
        }
        let l = s.ln();
        assert!((l.coeff(&[1, 0]) - a).norm() < 1e-14);
        assert!((l.coeff(&[0, 1]) - b).norm() < 1e-14);
        for i in 3..m.len() {
            assert!(l.coeffs[i].norm() < 1e-13, "{:?}", m.exponents(i));
        }
    }

    #[test]
    fn derivative_scales_by_factorials() {
        let m = Arc::new(Monomials::new(1, 4));
        // 1/(1-x) = sum x^n
        let s = TaylorSeries::from_coeffs(m, vec![Complex64::new(1.0, 0.0); 5]);
        assert_eq!(s.derivative(&[3]).re, 6.0);
        // ln(1/(1-x)) = sum x^n / n ; fourth derivative = 3! = 6
        assert!((s.ln().derivative(&[4]).re - 6.0).abs() < 1e-13);
    }
}
