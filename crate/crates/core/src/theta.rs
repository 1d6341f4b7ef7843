//! Riemann theta functions by certified lattice summation.
//!
//! The series `sum_m exp(2 pi i (z, m) + pi i (B m, m))` is summed over the
//! lattice points inside an ellipsoid `|| m - c ||_Y <= R`, where `Y = Im B`
//! and `c = -Y^{-1} Im z` is the maximum of the Gaussian envelope. The radius
//! is the smallest one for which an explicit tail bound (shell counting,
//! Gaussian decay, polynomial weight for derivatives) falls below the
//! requested tolerance. The tolerance is absolute relative to the envelope
//! peak `exp(pi c^T Y c)`, which is 1 whenever `Im z` lies in the fundamental
//! cell.
//!
//! Lattice points are visited in `{n, -n}` pairs in a fixed canonical order,
//! so `theta(-z) == theta(z)` holds bit for bit.

use crate::curve::KPVectors;
use crate::error::{Error, Result};
use crate::series::{Monomials, TaylorSeries};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::sync::Arc;

pub const MAX_DERIVATIVE_ORDER: usize = 8;
pub const MAX_GENUS: usize = 6;
pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_DIVISOR_FLOOR: f64 = 1e-8;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Period matrix: complex symmetric with positive definite imaginary part.
#[derive(Debug, Clone)]
pub struct RiemannMatrix {
    entries: DMatrix<Complex64>,
    imag: DMatrix<f64>,
    imag_inv: DMatrix<f64>,
    /// upper triangular `R` with `Y = R^T R`
    chol_upper: DMatrix<f64>,
    lambda_min: f64,
}

impl RiemannMatrix {
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        let g = entries.nrows();
        if g == 0 || entries.ncols() != g {
            return Err(Error::Domain(format!("period matrix must be square, got {}x{}", g, entries.ncols())));
        }
        if g > MAX_GENUS {
            return Err(Error::Domain(format!("genus {g} exceeds {MAX_GENUS}")));
        }
        let scale = entries.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for j in 0..g {
            for k in 0..j {
                if (entries[(j, k)] - entries[(k, j)]).norm() > 1e-12 * scale {
                    return Err(Error::Domain(format!("period matrix not symmetric at ({j},{k})")));
                }
            }
        }
        // symmetrize exactly so that quadratic forms are evaluated consistently
        let entries = DMatrix::from_fn(g, g, |j, k| {
            if j == k {
                entries[(j, j)]
            } else {
                (entries[(j, k)] + entries[(k, j)]) * 0.5
            }
        });
        let imag = entries.map(|c| c.im);
        let chol = imag
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("imaginary part is not positive definite".into()))?;
        let chol_upper = chol.l().transpose();
        let imag_inv = chol.inverse();
        let lambda_min = SymmetricEigen::new(imag.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if lambda_min <= 0.0 {
            return Err(Error::Domain("imaginary part is not positive definite".into()));
        }
        Ok(Self { entries, imag, imag_inv, chol_upper, lambda_min })
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let g = rows.len();
        for r in rows {
            if r.len() != g {
                return Err(Error::Dimension { expected: g, got: r.len() });
            }
        }
        Self::new(DMatrix::from_fn(g, g, |j, k| rows[j][k]))
    }

    pub fn genus(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn imag(&self) -> &DMatrix<f64> {
        &self.imag
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.entries.map(|c| c * factor))
    }

    pub fn rows(&self) -> Vec<Vec<Complex64>> {
        (0..self.genus()).map(|j| self.entries.row(j).iter().cloned().collect()).collect()
    }

    fn check_len(&self, v: &[Complex64]) -> Result<()> {
        if v.len() != self.genus() {
            return Err(Error::Dimension { expected: self.genus(), got: v.len() });
        }
        Ok(())
    }
}

/// Half-integer characteristic `[eps, delta]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Characteristic {
    eps: Vec<f64>,
    delta: Vec<f64>,
}

impl Characteristic {
    pub fn new(eps: Vec<f64>, delta: Vec<f64>) -> Result<Self> {
        if eps.len() != delta.len() {
            return Err(Error::Dimension { expected: eps.len(), got: delta.len() });
        }
        if eps.iter().chain(&delta).any(|&e| e != 0.0 && e != 0.5) {
            return Err(Error::Domain("characteristic entries must be 0 or 1/2".into()));
        }
        Ok(Self { eps, delta })
    }

    pub fn zero(g: usize) -> Self {
        Self { eps: vec![0.0; g], delta: vec![0.0; g] }
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    /// All `2^g` vectors in `{0, 1/2}^g`, in binary counting order.
    pub fn all_half_vectors(g: usize) -> Vec<Vec<f64>> {
        (0..1usize << g)
            .map(|bits| (0..g).map(|k| if bits >> k & 1 == 1 { 0.5 } else { 0.0 }).collect())
            .collect()
    }
}

/// Ordered list of constant directions; the derivative is `d_1 ... d_n theta`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DerivativeSpec {
    dirs: Vec<Vec<Complex64>>,
}

impl DerivativeSpec {
    pub fn new(dirs: Vec<Vec<Complex64>>) -> Result<Self> {
        if dirs.len() > MAX_DERIVATIVE_ORDER {
            return Err(Error::UnsupportedOrder(dirs.len()));
        }
        Ok(Self { dirs })
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// `dir` repeated `order` times.
    pub fn repeated(dir: &[Complex64], order: usize) -> Result<Self> {
        Self::new(vec![dir.to_vec(); order])
    }

    pub fn order(&self) -> usize {
        self.dirs.len()
    }

    pub fn dirs(&self) -> &[Vec<Complex64>] {
        &self.dirs
    }

    fn max_norm(&self) -> f64 {
        self.dirs.iter().map(|d| vnorm(d)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    /// absolute tail bound, relative to the envelope peak
    pub tol: f64,
    /// cap on the ellipsoid radius in the `Im B` metric
    pub max_radius: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_radius: 25.0 }
    }
}

impl Truncation {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    /// Smallest radius whose tail bound is below `tol` for derivatives of the
    /// given order with direction norm `dnorm`.
    pub fn radius(&self, b: &RiemannMatrix, center_norm: f64, dnorm: f64, order: usize) -> Result<f64> {
        if !(self.tol > 0.0) {
            return Err(Error::Domain("truncation tolerance must be positive".into()));
        }
        let g = b.genus() as i32;
        let sl = b.lambda_min().sqrt();
        let bound = |r: f64| -> f64 {
            let mut total = 0.0;
            for j in 0..200 {
                let inner = r + j as f64;
                let outer = inner + 1.0;
                let count = (2.0 * outer / sl + 1.0).powi(g);
                let weight = if order == 0 {
                    1.0
                } else {
                    (2.0 * PI * dnorm * (outer / sl + center_norm)).powi(order as i32)
                };
                let term = count * weight * (-PI * inner * inner).exp();
                total += term;
                if term < total * 1e-17 {
                    break;
                }
            }
            total
        };
        let mut r = 0.5;
        while bound(r) > self.tol {
            r += 0.02;
            if r > self.max_radius {
                return Err(Error::TruncationInfeasible { radius: r, cap: self.max_radius });
            }
        }
        Ok(r)
    }
}

pub(crate) fn vnorm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Lattice points `n in Z^g + eps` with `|| n - c ||_Y <= radius`, grouped in
/// `{n, -n}` pairs. Coordinates are stored doubled so they are exact integers.
struct LatticeSet {
    doubled: Vec<Vec<i64>>,
    groups: Vec<(usize, usize)>,
}

fn enumerate_lattice(b: &RiemannMatrix, center: &[f64], eps: &[f64], radius: f64) -> LatticeSet {
    let g = b.genus();
    let r = &b.chol_upper;
    let shift: Vec<i64> = eps.iter().map(|&e| if e == 0.5 { 1 } else { 0 }).collect();
    let mut found: Vec<Vec<i64>> = Vec::new();
    let mut n = vec![0.0f64; g];
    // rows of R x, with x = n - c, processed from the last coordinate upward
    fn rec(
        i: usize,
        left: f64,
        r: &DMatrix<f64>,
        center: &[f64],
        eps: &[f64],
        n: &mut Vec<f64>,
        shift: &[i64],
        out: &mut Vec<Vec<i64>>,
    ) {
        let g = n.len();
        let mut rest = 0.0;
        for j in i + 1..g {
            rest += r[(i, j)] * (n[j] - center[j]);
        }
        let rii = r[(i, i)];
        let half = left.max(0.0).sqrt() / rii;
        let mid = center[i] - rest / rii;
        let lo = (mid - half - eps[i]).ceil() as i64;
        let hi = (mid + half - eps[i]).floor() as i64;
        for m in lo..=hi {
            n[i] = m as f64 + eps[i];
            let row = rii * (n[i] - center[i]) + rest;
            let rem = left - row * row;
            if rem < 0.0 {
                continue;
            }
            if i == 0 {
                out.push((0..g).map(|k| (n[k] * 2.0).round() as i64).collect());
                let _ = shift;
            } else {
                rec(i - 1, rem, r, center, eps, n, shift, out);
            }
        }
    }
    rec(g - 1, radius * radius, r, center, eps, &mut n, &shift, &mut found);

    // canonical pairing: representative = lexicographic max of {n, -n}
    let canon = |v: &Vec<i64>| -> Vec<i64> {
        let neg: Vec<i64> = v.iter().map(|x| -x).collect();
        if *v >= neg { v.clone() } else { neg }
    };
    let mut keyed: Vec<(Vec<i64>, Vec<i64>)> = found.into_iter().map(|v| (canon(&v), v)).collect();
    // within a group the representative itself comes first
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| (b.1 == b.0).cmp(&(a.1 == a.0))));
    let mut doubled = Vec::with_capacity(keyed.len());
    let mut groups = Vec::new();
    let mut i = 0;
    while i < keyed.len() {
        let start = doubled.len();
        let key = keyed[i].0.clone();
        while i < keyed.len() && keyed[i].0 == key {
            doubled.push(keyed[i].1.clone());
            i += 1;
        }
        groups.push((start, doubled.len() - start));
    }
    LatticeSet { doubled, groups }
}

fn center_of(b: &RiemannMatrix, z: &[Complex64]) -> Vec<f64> {
    let g = b.genus();
    (0..g)
        .map(|j| -(0..g).map(|k| b.imag_inv[(j, k)] * z[k].im).sum::<f64>())
        .collect()
}

/// Sum of weighted lattice terms. `fill(n, term, out)` adds the contributions
/// of the lattice point `n` (already including the characteristic shift).
fn lattice_sum<F>(
    b: &RiemannMatrix,
    z: &[Complex64],
    ch: &Characteristic,
    radius: f64,
    out_len: usize,
    mut fill: F,
) -> (Vec<Complex64>, f64)
where
    F: FnMut(&[f64], Complex64, &mut [Complex64]),
{
    let g = b.genus();
    let center = center_of(b, z);
    let set = enumerate_lattice(b, &center, ch.eps(), radius);
    let zd: Vec<Complex64> = z.iter().zip(ch.delta()).map(|(zj, d)| zj + d).collect();
    let mut acc = vec![Complex64::new(0.0, 0.0); out_len];
    let mut group_buf = vec![Complex64::new(0.0, 0.0); out_len];
    let mut abs_sum = 0.0;
    let mut n = vec![0.0; g];
    for &(start, len) in &set.groups {
        group_buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for p in &set.doubled[start..start + len] {
            for k in 0..g {
                n[k] = p[k] as f64 * 0.5;
            }
            let mut quad = Complex64::new(0.0, 0.0);
            for j in 0..g {
                let mut row = Complex64::new(0.0, 0.0);
                for k in 0..g {
                    row += b.entries[(j, k)] * n[k];
                }
                quad += row * n[j];
            }
            let mut lin = Complex64::new(0.0, 0.0);
            for j in 0..g {
                lin += zd[j] * n[j];
            }
            let term = (I * PI * quad + I * 2.0 * PI * lin).exp();
            abs_sum += term.norm();
            fill(&n, term, &mut group_buf);
        }
        for (a, t) in acc.iter_mut().zip(&group_buf) {
            *a += t;
        }
    }
    (acc, abs_sum)
}

/// Value of a lattice sum together with the sum of absolute values of its
/// terms (the natural scale for relative thresholds).
#[derive(Debug, Clone, Copy)]
pub struct ThetaValue {
    pub value: Complex64,
    pub abs_sum: f64,
}

fn weight_norms(b: &RiemannMatrix, z: &[Complex64]) -> f64 {
    let c = center_of(b, z);
    c.iter().map(|x| x * x).sum::<f64>().sqrt() + 1.0
}

/// `d_1 ... d_n theta[eps, delta](z | B)` together with the term scale.
pub fn theta_general(
    z: &[Complex64],
    b: &RiemannMatrix,
    ch: &Characteristic,
    spec: &DerivativeSpec,
    trunc: &Truncation,
) -> Result<ThetaValue> {
    b.check_len(z)?;
    if ch.eps().len() != b.genus() {
        return Err(Error::Dimension { expected: b.genus(), got: ch.eps().len() });
    }
    for d in spec.dirs() {
        b.check_len(d)?;
    }
    let radius = trunc.radius(b, weight_norms(b, z), spec.max_norm(), spec.order())?;
    let two_pi_i = I * 2.0 * PI;
    let (v, abs_sum) = lattice_sum(b, z, ch, radius, 1, |n, term, out| {
        let mut w = term;
        for d in spec.dirs() {
            let dot: Complex64 = d.iter().zip(n).map(|(dk, nk)| dk * nk).sum();
            w *= two_pi_i * dot;
        }
        out[0] += w;
    });
    Ok(ThetaValue { value: v[0], abs_sum })
}

pub fn theta(z: &[Complex64], b: &RiemannMatrix, trunc: &Truncation) -> Result<Complex64> {
    Ok(theta_general(z, b, &Characteristic::zero(b.genus()), &DerivativeSpec::none(), trunc)?.value)
}

pub fn theta_deriv(
    z: &[Complex64],
    b: &RiemannMatrix,
    spec: &DerivativeSpec,
    trunc: &Truncation,
) -> Result<Complex64> {
    Ok(theta_general(z, b, &Characteristic::zero(b.genus()), spec, trunc)?.value)
}

pub fn theta_char(
    z: &[Complex64],
    b: &RiemannMatrix,
    ch: &Characteristic,
    trunc: &Truncation,
) -> Result<Complex64> {
    Ok(theta_general(z, b, ch, &DerivativeSpec::none(), trunc)?.value)
}

/// Level-two theta function `theta[eps, 0](2z | 2B)`, differentiated in `z`
/// (chain-rule factor 2 per derivative).
pub fn level2_theta(
    eps: &[f64],
    z: &[Complex64],
    b: &RiemannMatrix,
    spec: &DerivativeSpec,
    trunc: &Truncation,
) -> Result<Complex64> {
    let b2 = b.scaled(2.0)?;
    let ch = Characteristic::new(eps.to_vec(), vec![0.0; eps.len()])?;
    let z2: Vec<Complex64> = z.iter().map(|c| c * 2.0).collect();
    let v = theta_general(&z2, &b2, &ch, spec, trunc)?;
    Ok(v.value * 2f64.powi(spec.order() as i32))
}

/// Taylor jet of `theta[ch](z + sum_k s_k d_k)` in the variables `s_k` up to
/// total degree `order`.
pub fn theta_jet(
    z: &[Complex64],
    b: &RiemannMatrix,
    ch: &Characteristic,
    dirs: &[Vec<Complex64>],
    order: usize,
    trunc: &Truncation,
) -> Result<(TaylorSeries, f64)> {
    b.check_len(z)?;
    for d in dirs {
        b.check_len(d)?;
    }
    let mono = Arc::new(Monomials::new(dirs.len(), order));
    let dnorm = dirs.iter().map(|d| vnorm(d)).fold(0.0, f64::max);
    let radius = trunc.radius(b, weight_norms(b, z), dnorm.max(1e-300), order)?;
    let two_pi_i = I * 2.0 * PI;
    let nv = dirs.len();
    // powers[k][e] = (2 pi i d_k . n)^e / e!
    let mut powers = vec![vec![Complex64::new(0.0, 0.0); order + 1]; nv];
    let (coeffs, abs_sum) = lattice_sum(b, z, ch, radius, mono.len(), |n, term, out| {
        for (k, d) in dirs.iter().enumerate() {
            let a: Complex64 = two_pi_i * d.iter().zip(n).map(|(dk, nk)| dk * nk).sum::<Complex64>();
            powers[k][0] = Complex64::new(1.0, 0.0);
            for e in 1..=order {
                powers[k][e] = powers[k][e - 1] * a / e as f64;
            }
        }
        for (i, o) in out.iter_mut().enumerate() {
            let ex = mono.exponents(i);
            let mut w = term;
            for k in 0..nv {
                w *= powers[k][ex[k]];
            }
            *o += w;
        }
    });
    Ok((TaylorSeries::from_coeffs(mono, coeffs), abs_sum))
}

/// Jet of `Theta[eps](w) = theta[eps, 0](2w | 2B)` around `w`.
pub fn level2_jet(
    eps: &[f64],
    w: &[Complex64],
    b: &RiemannMatrix,
    dirs: &[Vec<Complex64>],
    order: usize,
    trunc: &Truncation,
) -> Result<(TaylorSeries, f64)> {
    let b2 = b.scaled(2.0)?;
    let ch = Characteristic::new(eps.to_vec(), vec![0.0; eps.len()])?;
    let w2: Vec<Complex64> = w.iter().map(|c| c * 2.0).collect();
    let d2: Vec<Vec<Complex64>> = dirs.iter().map(|d| d.iter().map(|c| c * 2.0).collect()).collect();
    theta_jet(&w2, &b2, &ch, &d2, order, trunc)
}

/// Affine theta argument `Z + U x + V y + W t`.
pub fn affine_point(vecs: &KPVectors, x: Complex64, y: Complex64, t: Complex64) -> Vec<Complex64> {
    (0..vecs.z.len())
        .map(|j| vecs.z[j] + vecs.u[j] * x + vecs.v[j] * y + vecs.w[j] * t)
        .collect()
}

/// Taylor jet of `ln theta(Z + U x + V y + W t)` in `(x, y, t)` around the
/// given point. Fails when `|theta|` is below `floor` times the term scale.
pub fn log_theta_jet(
    point: &[Complex64],
    vecs: &KPVectors,
    b: &RiemannMatrix,
    order: usize,
    trunc: &Truncation,
    floor: f64,
) -> Result<TaylorSeries> {
    let dirs = vec![vecs.u.clone(), vecs.v.clone(), vecs.w.clone()];
    let (jet, scale) = theta_jet(point, b, &Characteristic::zero(b.genus()), &dirs, order, trunc)?;
    let v = jet.constant().norm();
    if v < floor * scale {
        return Err(Error::NearDivisor { value: v / scale, floor });
    }
    Ok(jet.ln())
}

/// `d_x^a d_y^b d_t^c u` with `u = -2 d_x^2 ln theta(U x + V y + W t + Z)`.
pub fn u_field(
    x: Complex64,
    y: Complex64,
    t: Complex64,
    vecs: &KPVectors,
    b: &RiemannMatrix,
    trunc: &Truncation,
    orders: [usize; 3],
) -> Result<Complex64> {
    let total: usize = orders.iter().sum();
    if total > 4 {
        return Err(Error::UnsupportedOrder(total));
    }
    let p = affine_point(vecs, x, y, t);
    let l = log_theta_jet(&p, vecs, b, total + 2, trunc, DEFAULT_DIVISOR_FLOOR)?;
    Ok(l.derivative(&[orders[0] + 2, orders[1], orders[2]]) * -2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn brute_theta_1d(z: Complex64, tau: Complex64, eps: f64, delta: f64, nmax: i64) -> Complex64 {
        (-nmax..=nmax)
            .map(|m| {
                let n = m as f64 + eps;
                (I * PI * tau * n * n + I * 2.0 * PI * (z + delta) * n).exp()
            })
            .sum()
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(RiemannMatrix::from_rows(&[vec![c(0.0, -1.0)]]).is_err());
        assert!(RiemannMatrix::from_rows(&[vec![c(0.0, 1.0), c(0.1, 0.0)], vec![c(0.2, 0.0), c(0.0, 1.0)]]).is_err());
        assert!(RiemannMatrix::from_rows(&[vec![c(0.0, 1.0)]]).is_ok());
    }

    #[test]
    fn nearly_diagonal_genus_one() {
        let b = RiemannMatrix::from_rows(&[vec![c(0.0, 10.0)]]).unwrap();
        let v = theta(&[c(0.0, 0.0)], &b, &Truncation::default()).unwrap();
        assert!((v - 1.0).norm() < 1e-12);
    }

    #[test]
    fn matches_brute_force_at_i() {
        let b = RiemannMatrix::from_rows(&[vec![c(0.0, 1.0)]]).unwrap();
        for z in [c(0.0, 0.0), c(0.3, 0.1), c(-0.2, -0.4)] {
            let v = theta(&[z], &b, &Truncation::default()).unwrap();
            assert!((v - brute_theta_1d(z, c(0.0, 1.0), 0.0, 0.0, 30)).norm() < 1e-13);
        }
    }

    #[test]
    fn zero_order_derivative_is_theta() {
        let b = RiemannMatrix::from_rows(&[vec![c(0.1, 0.9)]]).unwrap();
        let z = [c(0.2, 0.1)];
        let t = Truncation::default();
        assert_eq!(theta_deriv(&z, &b, &DerivativeSpec::none(), &t).unwrap(), theta(&z, &b, &t).unwrap());
    }

    #[test]
    fn odd_derivative_vanishes_at_origin() {
        let b = RiemannMatrix::from_rows(&[vec![c(0.3, 0.8)]]).unwrap();
        let spec = DerivativeSpec::repeated(&[c(1.0, 0.0)], 1).unwrap();
        let v = theta_deriv(&[c(0.0, 0.0)], &b, &spec, &Truncation::default()).unwrap();
        assert!(v.norm() < 1e-14);
    }

    #[test]
    fn second_derivative_matches_finite_difference() {
        let b = RiemannMatrix::from_rows(&[vec![c(0.0, 1.0)]]).unwrap();
        let t = Truncation::default();
        let z = c(0.17, 0.05);
        let h = 1e-4;
        let f = |x: Complex64| theta(&[x], &b, &t).unwrap();
        let fd = (f(z + h) - f(z) * 2.0 + f(z - h)) / (h * h);
        let spec = DerivativeSpec::repeated(&[c(1.0, 0.0)], 2).unwrap();
        let exact = theta_deriv(&[z], &b, &spec, &t).unwrap();
        assert!((fd - exact).norm() / exact.norm() < 1e-6);
    }

    #[test]
    fn order_limit() {
        assert!(matches!(DerivativeSpec::repeated(&[c(1.0, 0.0)], 9), Err(Error::UnsupportedOrder(9))));
    }

    #[test]
    fn zero_characteristic_is_theta() {
        let b = RiemannMatrix::from_rows(&[vec![c(0.0, 1.2), c(0.1, 0.3)], vec![c(0.1, 0.3), c(0.2, 0.9)]]).unwrap();
        let z = [c(0.1, 0.2), c(-0.3, 0.05)];
        let t = Truncation::default();
        let a = theta_char(&z, &b, &Characteristic::zero(2), &t).unwrap();
        assert_eq!(a, theta(&z, &b, &t).unwrap());
    }

    #[test]
    fn jacobi_identity_at_i() {
        let b = RiemannMatrix::from_rows(&[vec![c(0.0, 1.0)]]).unwrap();
        let t = Truncation::default();
        let z = [c(0.0, 0.0)];
        let th = |e: f64, d: f64| theta_char(&z, &b, &Characteristic::new(vec![e], vec![d]).unwrap(), &t).unwrap();
        let (t00, t10, t01) = (th(0.0, 0.0), th(0.5, 0.0), th(0.0, 0.5));
        // oracle values from direct sums
        let tau = c(0.0, 1.0);
        let o00 = brute_theta_1d(c(0.0, 0.0), tau, 0.0, 0.0, 30);
        let o10 = brute_theta_1d(c(0.0, 0.0), tau, 0.5, 0.0, 30);
        let o01 = brute_theta_1d(c(0.0, 0.0), tau, 0.0, 0.5, 30);
        assert!((t00 - o00).norm() < 1e-13 && (t10 - o10).norm() < 1e-13 && (t01 - o01).norm() < 1e-13);
        assert!((t00.powu(4) - t10.powu(4) - t01.powu(4)).norm() < 1e-10);
        assert!(th(0.5, 0.5).norm() < 1e-14);
    }

    #[test]
    fn level2_first_derivative_chain_rule() {
        let b = RiemannMatrix::from_rows(&[vec![c(0.2, 1.1), c(0.1, 0.2)], vec![c(0.1, 0.2), c(-0.1, 0.8)]]).unwrap();
        let t = Truncation::default();
        let z = [c(0.1, 0.05), c(0.2, -0.1)];
        let d = vec![c(0.4, 0.1), c(-0.2, 0.3)];
        let eps = [0.5, 0.0];
        let lhs = level2_theta(&eps, &z, &b, &DerivativeSpec::new(vec![d.clone()]).unwrap(), &t).unwrap();
        let b2 = b.scaled(2.0).unwrap();
        let z2: Vec<_> = z.iter().map(|x| x * 2.0).collect();
        let ch = Characteristic::new(eps.to_vec(), vec![0.0, 0.0]).unwrap();
        let inner = theta_general(&z2, &b2, &ch, &DerivativeSpec::new(vec![d]).unwrap(), &t).unwrap().value;
        assert!((lhs - inner * 2.0).norm() < 1e-14 * lhs.norm().max(1.0));
    }

    #[test]
    fn evenness_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = RiemannMatrix::from_rows(&[
            vec![c(0.3, 1.1), c(0.2, 0.3), c(0.0, 0.1)],
            vec![c(0.2, 0.3), c(-0.1, 0.9), c(0.1, -0.2)],
            vec![c(0.0, 0.1), c(0.1, -0.2), c(0.4, 1.3)],
        ])
        .unwrap();
        for _ in 0..10 {
            let z: Vec<Complex64> = (0..3).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-0.6..0.6))).collect();
            let mz: Vec<Complex64> = z.iter().map(|x| -x).collect();
            let t = Truncation::default();
            assert_eq!(theta(&z, &b, &t).unwrap(), theta(&mz, &b, &t).unwrap());
        }
    }

    #[test]
    fn jet_agrees_with_directional_derivatives() {
        let b = RiemannMatrix::from_rows(&[vec![c(0.2, 1.1), c(0.1, 0.2)], vec![c(0.1, 0.2), c(-0.1, 0.8)]]).unwrap();
        let t = Truncation::default();
        let z = vec![c(0.1, 0.05), c(0.2, -0.1)];
        let u = vec![c(0.4, 0.1), c(-0.2, 0.3)];
        let v = vec![c(0.1, -0.5), c(0.7, 0.0)];
        let (jet, _) = theta_jet(&z, &b, &Characteristic::zero(2), &[u.clone(), v.clone()], 4, &t).unwrap();
        let spec = DerivativeSpec::new(vec![u.clone(), u.clone(), v.clone()]).unwrap();
        let direct = theta_deriv(&z, &b, &spec, &t).unwrap();
        assert!((jet.derivative(&[2, 1]) - direct).norm() < 1e-11 * direct.norm().max(1.0));
    }

    #[test]
    fn u_field_y_derivative_vanishes_without_v() {
        let b = RiemannMatrix::from_rows(&[vec![c(0.2, 1.1), c(0.1, 0.2)], vec![c(0.1, 0.2), c(-0.1, 0.8)]]).unwrap();
        let vecs = KPVectors::new(
            vec![c(0.6, 0.0), c(0.8, 0.0)],
            vec![c(0.0, 0.0); 2],
            vec![c(0.3, 0.1), c(0.0, 0.2)],
            vec![c(0.1, 0.2), c(0.3, -0.1)],
        );
        let t = Truncation::default();
        let uy = u_field(c(0.3, 0.0), c(0.0, 0.0), c(0.0, 0.0), &vecs, &b, &t, [0, 1, 0]).unwrap();
        assert_eq!(uy, c(0.0, 0.0));
    }
}
