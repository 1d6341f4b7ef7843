//! Jacobian test data from hyperelliptic curves.
//!
//! Curves are in the odd model `y^2 = prod (x - e_i)` with `2g + 1` real
//! branch points `e_0 < ... < e_{2g}` and a single point `P0` at infinity,
//! local coordinate `t` with `x = t^{-2}`, `y = t^{-(2g+1)} (1 + O(t^2))`.
//!
//! Homology basis: `a_i` encircles the cut `[e_{2i}, e_{2i+1}]`. For genus 1
//! the `b` cycle crosses the gap `[e_1, e_2]`; for genus 2 the `b` periods are
//! `2 (I_1 - I_3)` and `2 I_3`, where `I_k` is the integral over the gap
//! `[e_k, e_{k+1}]`. On every interval the square root is taken as
//! `sqrt((x - a)(b - x)) * r(x)` with `r = sqrt(-R)` on the principal branch
//! for `-R >= 0` and `-i sqrt(R)` otherwise (`R` the product over the
//! remaining branch points).

use crate::detect::kp_point;
use crate::error::{Error, Result};
use crate::quad::{chebyshev_nodes, gauss_legendre};
use crate::theta::{theta, RiemannMatrix, Truncation};
use crate::weierstrass::eisenstein;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::OnceLock;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Number of Taylor coefficients kept for the holomorphic differentials.
pub const JET_ORDER: usize = 6;
pub const DEFAULT_QUAD_ORDER: usize = 200;
const CALIBRATION_THRESHOLD: f64 = 1e-5;

/// Flex data `(A, p, E)` attached to a point of the curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexData {
    pub a: Vec<Complex64>,
    pub p: Complex64,
    pub e: Complex64,
}

/// Directions `(U, V, W)`, base point `Z` and optional flex data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KPVectors {
    pub u: Vec<Complex64>,
    pub v: Vec<Complex64>,
    pub w: Vec<Complex64>,
    pub z: Vec<Complex64>,
    pub flex: Option<FlexData>,
}

impl KPVectors {
    pub fn new(u: Vec<Complex64>, v: Vec<Complex64>, w: Vec<Complex64>, z: Vec<Complex64>) -> Self {
        Self { u, v, w, z, flex: None }
    }

    pub fn genus(&self) -> usize {
        self.u.len()
    }

    /// Weighted rescaling `(lambda U, lambda^2 V, lambda^3 W)`; flex data
    /// follows as `(A, lambda p, lambda^2 E)`.
    pub fn scaled(&self, lambda: Complex64) -> Self {
        let l2 = lambda * lambda;
        let l3 = l2 * lambda;
        Self {
            u: self.u.iter().map(|c| c * lambda).collect(),
            v: self.v.iter().map(|c| c * l2).collect(),
            w: self.w.iter().map(|c| c * l3).collect(),
            z: self.z.clone(),
            flex: self.flex.as_ref().map(|f| FlexData { a: f.a.clone(), p: f.p * lambda, e: f.e * l2 }),
        }
    }

    /// Rescale so that `|U| = 1` with the first nonvanishing component real positive.
    pub fn gauge_fixed(&self) -> Result<Self> {
        Ok(self.scaled(gauge_factor(&self.u)?))
    }
}

/// The `lambda` that brings `u` to gauge.
pub fn gauge_factor(u: &[Complex64]) -> Result<Complex64> {
    let n = crate::theta::vnorm(u);
    if n <= 1e-10 {
        return Err(Error::Domain("U vanishes".into()));
    }
    let first = u.iter().find(|c| c.norm() > 1e-12 * n).copied().unwrap_or(ONE);
    Ok(Complex64::from_polar(1.0 / n, -first.arg()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperellipticCurve {
    branch_points: Vec<Complex64>,
}

impl HyperellipticCurve {
    pub fn new(branch_points: Vec<Complex64>) -> Result<Self> {
        let n = branch_points.len();
        if n != 3 && n != 5 {
            return Err(Error::Domain(format!("expected 3 or 5 branch points, got {n}")));
        }
        let diam = branch_points
            .iter()
            .flat_map(|a| branch_points.iter().map(move |b| (a - b).norm()))
            .fold(0.0, f64::max);
        for i in 0..n {
            for j in 0..i {
                if (branch_points[i] - branch_points[j]).norm() < 1e-8 * diam {
                    return Err(Error::Domain(format!("branch points {j} and {i} coincide")));
                }
            }
        }
        Ok(Self { branch_points })
    }

    pub fn real(points: &[f64]) -> Result<Self> {
        Self::new(points.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn genus(&self) -> usize {
        (self.branch_points.len() - 1) / 2
    }

    pub fn branch_points(&self) -> &[Complex64] {
        &self.branch_points
    }

    fn sorted_real(&self) -> Result<Vec<f64>> {
        let scale = self.branch_points.iter().map(|c| c.norm()).fold(1.0, f64::max);
        if self.branch_points.iter().any(|c| c.im.abs() > 1e-14 * scale) {
            return Err(Error::Domain("period computation needs real branch points".into()));
        }
        let mut e: Vec<f64> = self.branch_points.iter().map(|c| c.re).collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(e)
    }
}

/// Periods, normalized period matrix and jets at infinity.
#[derive(Debug, Clone)]
pub struct PeriodData {
    pub branch_points: Vec<f64>,
    /// `a_periods[(i, j)]` is the `a_i` period of `x^j dx / y`
    pub a_periods: DMatrix<Complex64>,
    pub b_periods: DMatrix<Complex64>,
    pub b: RiemannMatrix,
    /// inverse of `a_periods`; normalized differentials are `sum_j omega_j C[j, k]`
    pub normalizer: DMatrix<Complex64>,
    /// `jet_coeffs[(k, m)]`: coefficient of `t^m` of the k-th normalized differential at infinity
    pub jet_coeffs: DMatrix<Complex64>,
    /// coefficients making `x^g dx / (2y) - sum alpha_j omega_j` a-normalized
    pub alpha: Vec<Complex64>,
    /// constant term of that second-kind differential at infinity
    pub a0: Complex64,
    pub quad_order: usize,
    pub quad_estimate: f64,
}

impl PeriodData {
    pub fn genus(&self) -> usize {
        self.alpha.len()
    }
}

fn sqrt_cut(v: f64) -> Complex64 {
    if v >= 0.0 {
        Complex64::new(v.sqrt(), 0.0)
    } else {
        Complex64::new(0.0, -(-v).sqrt())
    }
}

/// `int_{e_k}^{e_{k+1}} x^j dx / y` for `j = 0..=g`.
fn interval_integrals(e: &[f64], k: usize, n: usize) -> Vec<Complex64> {
    let g = (e.len() - 1) / 2;
    let (a, b) = (e[k], e[k + 1]);
    let mut out = vec![ZERO; g + 1];
    for x in chebyshev_nodes(a, b, n) {
        let r: f64 = e.iter().enumerate().filter(|&(i, _)| i != k && i != k + 1).map(|(_, ei)| x - ei).product();
        let inv = ONE / sqrt_cut(-r);
        let mut xp = 1.0;
        for o in out.iter_mut() {
            *o += inv * xp;
            xp *= x;
        }
    }
    out.iter().map(|o| o * (PI / n as f64)).collect()
}

fn all_integrals(e: &[f64], n: usize) -> Vec<Vec<Complex64>> {
    (0..e.len() - 1).map(|k| interval_integrals(e, k, n)).collect()
}

fn assemble(e: &[f64], iv: &[Vec<Complex64>]) -> (DMatrix<Complex64>, DMatrix<Complex64>, Vec<Complex64>) {
    let g = (e.len() - 1) / 2;
    let a = DMatrix::from_fn(g, g, |i, j| iv[2 * i][j] * 2.0);
    let b = if g == 1 {
        DMatrix::from_fn(1, 1, |_, j| iv[1][j] * 2.0)
    } else {
        DMatrix::from_fn(2, 2, |i, j| if i == 0 { (iv[1][j] - iv[3][j]) * 2.0 } else { iv[3][j] * 2.0 })
    };
    // a-periods of x^g dx / (2y)
    let second: Vec<Complex64> = (0..g).map(|i| iv[2 * i][g]).collect();
    (a, b, second)
}

// truncated power series helpers, coefficient vectors of fixed length

fn ps_mul(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let n = a.len();
    let mut c = vec![ZERO; n];
    for i in 0..n {
        for j in 0..n - i {
            c[i + j] += a[i] * b[j];
        }
    }
    c
}

fn ps_sqrt(a: &[Complex64]) -> Vec<Complex64> {
    let n = a.len();
    let mut r = vec![ZERO; n];
    r[0] = a[0].sqrt();
    for m in 1..n {
        let mut s = a[m];
        for k in 1..m {
            s -= r[k] * r[m - k];
        }
        r[m] = s / (r[0] * 2.0);
    }
    r
}

fn ps_inv(a: &[Complex64]) -> Vec<Complex64> {
    let n = a.len();
    let mut r = vec![ZERO; n];
    r[0] = ONE / a[0];
    for m in 1..n {
        let mut s = ZERO;
        for k in 1..=m {
            s += a[k] * r[m - k];
        }
        r[m] = -s / a[0];
    }
    r
}

/// Series of `1 / S(t)`, `S = sqrt(prod (1 - e t^2))`, with `len` coefficients.
fn inv_s_series(e: &[f64], len: usize) -> Vec<Complex64> {
    let mut prod = vec![ZERO; len];
    prod[0] = ONE;
    for &ei in e {
        let mut f = vec![ZERO; len];
        f[0] = ONE;
        if len > 2 {
            f[2] = Complex64::new(-ei, 0.0);
        }
        prod = ps_mul(&prod, &f);
    }
    ps_inv(&ps_sqrt(&prod))
}

/// Raw jets at infinity: `x^j dx / y = -2 t^{2g-2-2j} / S(t) dt`.
fn raw_jets_infinity(e: &[f64]) -> Vec<Vec<Complex64>> {
    let g = (e.len() - 1) / 2;
    let inv = inv_s_series(e, JET_ORDER);
    (0..g)
        .map(|j| {
            let shift = 2 * g - 2 - 2 * j;
            (0..JET_ORDER).map(|m| if m >= shift { inv[m - shift] * -2.0 } else { ZERO }).collect()
        })
        .collect()
}

fn normalize_jets(c: &DMatrix<Complex64>, raw: &[Vec<Complex64>]) -> DMatrix<Complex64> {
    let g = raw.len();
    let len = raw[0].len();
    DMatrix::from_fn(g, len, |k, m| (0..g).map(|j| c[(j, k)] * raw[j][m]).sum())
}

/// Periods of the curve and derived normalization data. Quadrature uses
/// `quad_order` Gauss–Chebyshev nodes per interval; the estimate compares
/// against half the order.
pub fn hyperelliptic_periods(curve: &HyperellipticCurve, quad_order: usize) -> Result<PeriodData> {
    if quad_order < 8 {
        return Err(Error::Domain("quadrature order must be at least 8".into()));
    }
    let e = curve.sorted_real()?;
    let g = curve.genus();
    let iv = all_integrals(&e, quad_order);
    let iv_half = all_integrals(&e, quad_order / 2);
    let scale = iv.iter().flatten().map(|c| c.norm()).fold(0.0, f64::max);
    let estimate = iv
        .iter()
        .flatten()
        .zip(iv_half.iter().flatten())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
        / scale;
    if estimate > 1e-7 {
        return Err(Error::Precision { estimate });
    }
    let (a, bp, second) = assemble(&e, &iv);
    let c = a.clone().try_inverse().ok_or(Error::DegenerateSystem)?;
    let bm = &bp * &c;
    let b = RiemannMatrix::new(bm)?;
    let alpha: Vec<Complex64> = {
        let rhs = nalgebra::DVector::from_vec(second);
        (&c * rhs).iter().cloned().collect()
    };
    let raw = raw_jets_infinity(&e);
    let s1: f64 = e.iter().sum();
    let a0 = Complex64::new(-s1 / 2.0, 0.0) - (0..g).map(|j| alpha[j] * raw[j][0]).sum::<Complex64>();
    let jet_coeffs = normalize_jets(&c, &raw);
    let _ = g;
    Ok(PeriodData {
        branch_points: e,
        a_periods: a,
        b_periods: bp,
        b,
        normalizer: c,
        jet_coeffs,
        alpha,
        a0,
        quad_order,
        quad_estimate: estimate,
    })
}

/// Normalized jets of the holomorphic differentials at a finite, non-branch
/// point `(x0, y0)` in the local coordinate `t = x - x0`. `upper` selects the
/// principal square root for `y0`.
pub fn jets_at_point(pd: &PeriodData, x0: Complex64, upper: bool) -> Result<DMatrix<Complex64>> {
    let e = &pd.branch_points;
    let g = pd.genus();
    if e.iter().any(|&ei| (x0 - ei).norm() < 1e-8) {
        return Err(Error::Domain("puncture sits on a branch point".into()));
    }
    let mut f = vec![ZERO; JET_ORDER];
    f[0] = ONE;
    for &ei in e {
        let lin = {
            let mut l = vec![ZERO; JET_ORDER];
            l[0] = x0 - ei;
            l[1] = ONE;
            l
        };
        f = ps_mul(&f, &lin);
    }
    let mut y = ps_sqrt(&f);
    if !upper {
        y.iter_mut().for_each(|c| *c = -*c);
    }
    let iy = ps_inv(&y);
    let mut raw = Vec::with_capacity(g);
    let mut xp = vec![ZERO; JET_ORDER];
    xp[0] = ONE;
    for _ in 0..g {
        raw.push(ps_mul(&xp, &iy));
        let mut lin = vec![ZERO; JET_ORDER];
        lin[0] = x0;
        lin[1] = ONE;
        xp = ps_mul(&xp, &lin);
    }
    Ok(normalize_jets(&pd.normalizer, &raw))
}

/// Scale conventions relating jet coefficients to `(U, V, W)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convention {
    pub v_scale: Complex64,
    pub w_scale: Complex64,
    /// divide the order-n coefficient by n + 1
    pub inverse_n: bool,
}

impl Convention {
    pub fn candidates() -> Vec<Convention> {
        let units = [ONE, -ONE, I, -I];
        let mut out = Vec::new();
        for inverse_n in [false, true] {
            for &v_scale in &units {
                for &w_scale in &units {
                    out.push(Convention { v_scale, w_scale, inverse_n });
                }
            }
        }
        out
    }

    fn vectors(&self, jets: &DMatrix<Complex64>) -> (Vec<Complex64>, Vec<Complex64>, Vec<Complex64>) {
        let g = jets.nrows();
        let (dv, dw) = if self.inverse_n { (2.0, 3.0) } else { (1.0, 1.0) };
        let u = (0..g).map(|k| jets[(k, 0)]).collect();
        let v = (0..g).map(|k| jets[(k, 1)] * self.v_scale / dv).collect();
        let w = (0..g).map(|k| jets[(k, 2)] * self.w_scale / dw).collect();
        (u, v, w)
    }
}

impl std::fmt::Display for Convention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v*{}, w*{}, 1/n {}", self.v_scale, self.w_scale, if self.inverse_n { "on" } else { "off" })
    }
}

/// Fixed base points used for fitting and verifying vectors.
fn probe_points(g: usize) -> Vec<Vec<Complex64>> {
    let raw = [
        [0.11, 0.21, -0.31, 0.07, 0.23, -0.17],
        [-0.27, 0.13, 0.19, -0.09, 0.05, 0.29],
        [0.33, -0.22, 0.04, 0.26, -0.14, 0.12],
    ];
    raw.iter()
        .map(|r| (0..g).map(|j| Complex64::new(r[j], r[j + 3])).collect())
        .collect()
}

/// Least-squares shift `d` such that `W + d U` balances the KP equation at the
/// probe points; returns the shift and the resulting max normalized residual.
pub fn fit_w_shift(
    b: &RiemannMatrix,
    u: &[Complex64],
    v: &[Complex64],
    w: &[Complex64],
    trunc: &Truncation,
) -> Result<(Complex64, f64)> {
    let g = u.len();
    let w1: Vec<Complex64> = w.iter().zip(u).map(|(a, b)| a + b).collect();
    let mut num = ZERO;
    let mut den = 0.0;
    let pts = probe_points(g);
    for z in &pts {
        let base = KPVectors::new(u.to_vec(), v.to_vec(), w.to_vec(), vec![ZERO; g]);
        let shifted = KPVectors::new(u.to_vec(), v.to_vec(), w1.clone(), vec![ZERO; g]);
        let (r0, _) = kp_point(z, &base, b, trunc)?;
        let (r1, _) = kp_point(z, &shifted, b, trunc)?;
        let s = r1 - r0;
        num += s.conj() * r0;
        den += s.norm_sqr();
    }
    if den == 0.0 {
        return Err(Error::DegenerateSystem);
    }
    let d = -num / den;
    let wd: Vec<Complex64> = w.iter().zip(u).map(|(a, b)| a + b * d).collect();
    let vecs = KPVectors::new(u.to_vec(), v.to_vec(), wd, vec![ZERO; g]);
    Ok((d, max_kp_residual(b, &vecs, trunc)?))
}

fn max_kp_residual(b: &RiemannMatrix, vecs: &KPVectors, trunc: &Truncation) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for z in probe_points(vecs.genus()) {
        let (r, s) = kp_point(&z, vecs, b, trunc)?;
        worst = worst.max(r.norm() / s);
    }
    Ok(worst)
}

pub const REFERENCE_CURVE: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];
pub const REFERENCE_PUNCTURE: Complex64 = Complex64 { re: 0.3, im: 0.5 };

/// Try every candidate convention at a finite puncture of the given curve.
/// Returns the best one with the residuals of all candidates.
pub fn calibrate(pd: &PeriodData, x0: Complex64, trunc: &Truncation) -> Result<(Convention, Vec<(Convention, f64)>)> {
    let jets = jets_at_point(pd, x0, true)?;
    let mut tried = Vec::new();
    for conv in Convention::candidates() {
        let (u, v, w) = conv.vectors(&jets);
        let res = fit_w_shift(&pd.b, &u, &v, &w, trunc).map(|(_, r)| r).unwrap_or(f64::INFINITY);
        tried.push((conv, res));
    }
    let best = tried
        .iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .copied()
        .ok_or(Error::DegenerateSystem)?;
    if !(best.1 < CALIBRATION_THRESHOLD) {
        let listing = tried.iter().map(|(c, r)| format!("[{c}: {r:.3e}]")).collect::<Vec<_>>().join(" ");
        return Err(Error::Convention { threshold: CALIBRATION_THRESHOLD, tried: listing });
    }
    Ok((best.0, tried))
}

/// The convention calibrated once on the reference curve.
pub fn convention() -> Result<Convention> {
    static CACHE: OnceLock<Result<Convention>> = OnceLock::new();
    CACHE
        .get_or_init(|| {
            let curve = HyperellipticCurve::real(&REFERENCE_CURVE)?;
            let pd = hyperelliptic_periods(&curve, DEFAULT_QUAD_ORDER)?;
            calibrate(&pd, REFERENCE_PUNCTURE, &Truncation::default()).map(|(c, _)| c)
        })
        .clone()
}

/// Gauge-fixed KP vectors at the point at infinity.
pub fn kp_vectors(pd: &PeriodData) -> Result<KPVectors> {
    let conv = convention()?;
    let g = pd.genus();
    let (u, v, w) = conv.vectors(&pd.jet_coeffs);
    let w: Vec<Complex64> = w.iter().zip(&u).map(|(a, b)| a + b * pd.a0 * 3.0).collect();
    let vecs = KPVectors::new(u, v, w, vec![ZERO; g]);
    verify(pd, &vecs)?;
    vecs.gauge_fixed()
}

/// Gauge-fixed KP vectors with the puncture at the finite point `x0`.
pub fn kp_vectors_at(pd: &PeriodData, x0: Complex64, upper: bool) -> Result<KPVectors> {
    let conv = convention()?;
    let jets = jets_at_point(pd, x0, upper)?;
    let (u, v, w) = conv.vectors(&jets);
    let trunc = Truncation::default();
    let (d, _) = fit_w_shift(&pd.b, &u, &v, &w, &trunc)?;
    let w: Vec<Complex64> = w.iter().zip(&u).map(|(a, b)| a + b * d).collect();
    let vecs = KPVectors::new(u, v, w, vec![ZERO; pd.genus()]);
    verify(pd, &vecs)?;
    vecs.gauge_fixed()
}

fn verify(pd: &PeriodData, vecs: &KPVectors) -> Result<()> {
    let r = max_kp_residual(&pd.b, vecs, &Truncation::default())?;
    if r < CALIBRATION_THRESHOLD {
        Ok(())
    } else {
        Err(Error::Convention { threshold: CALIBRATION_THRESHOLD, tried: format!("cached convention gives {r:.3e}") })
    }
}

/// A point of the curve away from `P0`, stored by its local coordinate
/// `t = x^{-1/2}` at infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t: Complex64,
}

impl CurvePoint {
    /// `upper` picks `t = 1/sqrt(x)` on the principal branch, otherwise its negative.
    pub fn from_x(x: Complex64, upper: bool) -> Result<Self> {
        if x.norm() == 0.0 {
            return Err(Error::Domain("x = 0 has no finite local coordinate at infinity".into()));
        }
        let t = ONE / x.sqrt();
        Ok(Self { t: if upper { t } else { -t } })
    }

    pub fn x(&self) -> Complex64 {
        ONE / (self.t * self.t)
    }
}

fn segment_distance(p: Complex64, a: Complex64, b: Complex64) -> f64 {
    let d = b - a;
    let s = if d.norm_sqr() == 0.0 { 0.0 } else { ((p - a) * d.conj()).re / d.norm_sqr() };
    (a + d * s.clamp(0.0, 1.0) - p).norm()
}

/// Flex data `(A, p, E)` at `point`, integrating from `P0` along the polyline
/// through `waypoints` in the `t` plane. Returned in the gauge of
/// [`kp_vectors`].
pub fn flex_data(pd: &PeriodData, point: &CurvePoint, waypoints: &[Complex64]) -> Result<FlexData> {
    let e = &pd.branch_points;
    let g = pd.genus();
    if point.t.norm() < 1e-12 {
        return Err(Error::Domain("flex point coincides with P0".into()));
    }
    // singular points of S(t) in the t plane
    let sing: Vec<Complex64> = e
        .iter()
        .filter(|&&ei| ei != 0.0)
        .flat_map(|&ei| {
            let r = ONE / Complex64::new(ei, 0.0).sqrt();
            [r, -r]
        })
        .collect();
    let mut nodes = vec![ZERO];
    nodes.extend_from_slice(waypoints);
    nodes.push(point.t);
    let series = inv_s_series(e, 40);
    let radius = sing.iter().map(|s| s.norm()).fold(f64::INFINITY, f64::min);
    let (gx, gw) = gauss_legendre(16);
    let mut s_prev = ONE;
    let mut a_raw = vec![ZERO; g];
    let mut p_int = ZERO;
    for seg in nodes.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let dist = sing.iter().map(|&s| segment_distance(s, a, b)).fold(f64::INFINITY, f64::min);
        if dist < 1e-3 {
            return Err(Error::Path { distance: dist });
        }
        let len = (b - a).norm();
        let h = 0.05f64.min(0.25 * dist);
        let panels = ((len / h).ceil() as usize).max(1);
        for k in 0..panels {
            let pa = a + (b - a) * (k as f64 / panels as f64);
            let pb = a + (b - a) * ((k + 1) as f64 / panels as f64);
            let half = (pb - pa) * 0.5;
            let mid = (pa + pb) * 0.5;
            for (xi, wi) in gx.iter().zip(&gw) {
                let t = mid + half * *xi;
                let wt = half * *wi;
                let t2 = t * t;
                let prod: Complex64 = e.iter().map(|&ei| ONE - t2 * ei).product();
                let mut s = prod.sqrt();
                if (s - s_prev).norm() > (-s - s_prev).norm() {
                    s = -s;
                }
                s_prev = s;
                let inv = ONE / s;
                // (1/S - 1)/t^2, by series near the origin
                let reg = if t.norm() < 0.3 * radius {
                    let mut acc = ZERO;
                    let mut tp = ONE;
                    for m in (2..series.len()).step_by(2) {
                        acc += series[m] * tp;
                        tp *= t2;
                    }
                    acc
                } else {
                    (inv - ONE) / t2
                };
                let mut second = -reg;
                for j in 0..g {
                    let om = t.powu((2 * g - 2 - 2 * j) as u32) * inv * -2.0;
                    a_raw[j] += om * wt;
                    second -= pd.alpha[j] * om;
                }
                p_int += second * wt;
            }
        }
    }
    let a: Vec<Complex64> = (0..g).map(|k| (0..g).map(|j| pd.normalizer[(j, k)] * a_raw[j]).sum()).collect();
    // p is minus the second-kind abelian integral, which behaves like -1/t
    let p = -(ONE / point.t + p_int);
    let en = point.x() + pd.a0 * 2.0;
    let u: Vec<Complex64> = (0..g).map(|k| pd.jet_coeffs[(k, 0)]).collect();
    let lambda = gauge_factor(&u)?;
    Ok(FlexData { a, p: p * lambda, e: en * lambda * lambda })
}

/// Genus-1 data for the normalized lattice `Z + tau Z`: `U = 1`, `V = 0`,
/// `W = -pi^2 E2(tau)`, so that `u = 2 p(x + Z - (1 + tau)/2) + 2 pi^2 E2 / 3`.
pub fn genus1_data(tau: Complex64) -> Result<(RiemannMatrix, KPVectors)> {
    if tau.im <= 0.0 {
        return Err(Error::Domain("Im(tau) must be positive".into()));
    }
    let b = RiemannMatrix::new(DMatrix::from_element(1, 1, tau))?;
    let w = -eisenstein(tau, 2) * PI * PI;
    Ok((b, KPVectors::new(vec![ONE], vec![ZERO], vec![w], vec![ZERO])))
}

/// Genus-1 Baker–Akhiezer function
/// `theta(A + U x + Z) / theta(U x + Z) * exp(p x)` in the gauge of [`kp_vectors`].
pub fn baker_akhiezer_genus1(pd: &PeriodData, point: &CurvePoint, x: Complex64) -> Result<Complex64> {
    if pd.genus() != 1 {
        return Err(Error::Domain("Baker–Akhiezer function implemented for genus 1".into()));
    }
    let vecs = kp_vectors(pd)?;
    let flex = flex_data(pd, point, &[])?;
    let trunc = Truncation::default();
    let arg = vecs.u[0] * x + vecs.z[0];
    let den = theta(&[arg], &pd.b, &trunc)?;
    if den.norm() < crate::theta::DEFAULT_DIVISOR_FLOOR {
        return Err(Error::NearDivisor { value: den.norm(), floor: crate::theta::DEFAULT_DIVISOR_FLOOR });
    }
    let num = theta(&[arg + flex.a[0]], &pd.b, &trunc)?;
    Ok(num / den * (flex.p * x).exp())
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn json_complex(c: Complex64) -> String {
    format!("[{}, {}]", fmt17(c.re), fmt17(c.im))
}

fn json_matrix(m: &DMatrix<Complex64>) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| format!("[{}]", (0..m.ncols()).map(|j| json_complex(m[(i, j)])).collect::<Vec<_>>().join(", ")))
        .collect();
    format!("[{}]", rows.join(", "))
}

fn json_vector(v: &[Complex64]) -> String {
    format!("[{}]", v.iter().map(|c| json_complex(*c)).collect::<Vec<_>>().join(", "))
}

/// JSON export with 17 significant digits; complex numbers are `[re, im]`.
pub fn period_json(pd: &PeriodData, vecs: Option<&KPVectors>) -> String {
    let mut s = String::from("{\n");
    let _ = writeln!(s, "  \"branch_points\": [{}],", pd.branch_points.iter().map(|x| fmt17(*x)).collect::<Vec<_>>().join(", "));
    let _ = writeln!(s, "  \"quad_order\": {},", pd.quad_order);
    let _ = writeln!(s, "  \"a_periods\": {},", json_matrix(&pd.a_periods));
    let _ = writeln!(s, "  \"b_periods\": {},", json_matrix(&pd.b_periods));
    let _ = writeln!(s, "  \"b_matrix\": {},", json_matrix(pd.b.entries()));
    let _ = write!(s, "  \"jet_coeffs\": {}", json_matrix(&pd.jet_coeffs));
    if let Some(v) = vecs {
        let _ = write!(
            s,
            ",\n  \"kp_vectors\": {{\"u\": {}, \"v\": {}, \"w\": {}, \"z\": {}}}",
            json_vector(&v.u),
            json_vector(&v.v),
            json_vector(&v.w),
            json_vector(&v.z)
        );
    }
    s.push_str("\n}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn agm(mut a: f64, mut b: f64) -> f64 {
        for _ in 0..60 {
            let (x, y) = ((a + b) / 2.0, (a * b).sqrt());
            a = x;
            b = y;
        }
        a
    }

    #[test]
    fn curve_validation() {
        assert!(HyperellipticCurve::real(&[0.0, 1.0]).is_err());
        assert!(HyperellipticCurve::real(&[0.0, 1.0, 1.0]).is_err());
        let cplx = HyperellipticCurve::new(vec![c(0.0, 1.0), c(1.0, 0.0), c(2.0, 0.0)]).unwrap();
        assert!(hyperelliptic_periods(&cplx, 100).is_err());
    }

    #[test]
    fn genus_one_matches_agm() {
        for lam in [2.0, 5.0, 1.3] {
            let curve = HyperellipticCurve::real(&[0.0, 1.0, lam]).unwrap();
            let pd = hyperelliptic_periods(&curve, DEFAULT_QUAD_ORDER).unwrap();
            let w1 = PI / agm(lam.sqrt(), (lam - 1.0).sqrt());
            let w2 = PI / agm(lam.sqrt(), 1.0);
            let tau = pd.b.entries()[(0, 0)];
            assert!((tau - c(0.0, w2 / w1)).norm() < 1e-9, "{tau}");
        }
    }

    #[test]
    fn genus_two_riemann_relations() {
        let curve = HyperellipticCurve::real(&REFERENCE_CURVE).unwrap();
        let pd = hyperelliptic_periods(&curve, DEFAULT_QUAD_ORDER).unwrap();
        let raw = &pd.b_periods * &pd.normalizer;
        assert!((raw[(0, 1)] - raw[(1, 0)]).norm() < 1e-9);
        let pd2 = hyperelliptic_periods(&curve, 2 * DEFAULT_QUAD_ORDER).unwrap();
        assert!((pd.b.entries() - pd2.b.entries()).iter().all(|d| d.norm() < 1e-10));
    }

    #[test]
    fn reference_calibration_is_plain() {
        let conv = convention().unwrap();
        assert_eq!(conv, Convention { v_scale: ONE, w_scale: ONE, inverse_n: false });
    }

    #[test]
    fn infinity_shift_matches_fit() {
        let curve = HyperellipticCurve::real(&REFERENCE_CURVE).unwrap();
        let pd = hyperelliptic_periods(&curve, DEFAULT_QUAD_ORDER).unwrap();
        let jets = &pd.jet_coeffs;
        let (u, v, w) = convention().unwrap().vectors(jets);
        let (d, r) = fit_w_shift(&pd.b, &u, &v, &w, &Truncation::default()).unwrap();
        assert!(r < 1e-8);
        assert!((d - pd.a0 * 3.0).norm() < 1e-6 * d.norm());
    }

    #[test]
    fn gauge_is_fixed() {
        let curve = HyperellipticCurve::real(&REFERENCE_CURVE).unwrap();
        let pd = hyperelliptic_periods(&curve, DEFAULT_QUAD_ORDER).unwrap();
        let v = kp_vectors(&pd).unwrap();
        assert!((crate::theta::vnorm(&v.u) - 1.0).abs() < 1e-15);
        let first = v.u.iter().find(|c| c.norm() > 1e-12).unwrap();
        assert!(first.im.abs() < 1e-15 && first.re > 0.0);
    }

    #[test]
    fn genus_one_curve_reproduces_closed_form() {
        let curve = HyperellipticCurve::real(&[0.0, 1.0, 3.0]).unwrap();
        let pd = hyperelliptic_periods(&curve, DEFAULT_QUAD_ORDER).unwrap();
        let v = kp_vectors(&pd).unwrap();
        let (_, v1) = genus1_data(pd.b.entries()[(0, 0)]).unwrap();
        assert!((v.u[0] - v1.u[0]).norm() < 1e-12);
        assert!((v.w[0] - v1.w[0]).norm() < 1e-8 * v1.w[0].norm(), "{} vs {}", v.w[0], v1.w[0]);
    }

    #[test]
    fn ba_normalized_at_origin() {
        let curve = HyperellipticCurve::real(&[0.0, 1.0, 3.0]).unwrap();
        let pd = hyperelliptic_periods(&curve, DEFAULT_QUAD_ORDER).unwrap();
        let pt = CurvePoint::from_x(c(0.5, 0.7), true).unwrap();
        let psi = baker_akhiezer_genus1(&pd, &pt, ZERO).unwrap();
        let flex = flex_data(&pd, &pt, &[]).unwrap();
        let t = Truncation::default();
        let ratio = theta(&[ZERO], &pd.b, &t).unwrap() / theta(&[flex.a[0]], &pd.b, &t).unwrap();
        assert!((psi * ratio - 1.0).norm() < 1e-14);
    }

    #[test]
    fn ba_solves_the_heat_operator() {
        let curve = HyperellipticCurve::real(&[0.0, 1.0, 3.0]).unwrap();
        let pd = hyperelliptic_periods(&curve, DEFAULT_QUAD_ORDER).unwrap();
        let pt = CurvePoint::from_x(c(0.5, 0.7), true).unwrap();
        let e = flex_data(&pd, &pt, &[]).unwrap().e;
        let vecs = kp_vectors(&pd).unwrap();
        let t = Truncation::default();
        let psi = |x: Complex64| baker_akhiezer_genus1(&pd, &pt, x).unwrap();
        for x in [c(0.1, 0.05), c(-0.2, 0.1), c(0.3, -0.1)] {
            let h = 1e-2;
            let d2 = |h: f64| (psi(x + h) - psi(x) * 2.0 + psi(x - h)) / (h * h);
            let (a, b, cc) = (d2(h), d2(h / 2.0), d2(h / 4.0));
            let ab = (b * 4.0 - a) / 3.0;
            let bc = (cc * 4.0 - b) / 3.0;
            let psi_xx = (bc * 16.0 - ab) / 15.0;
            let u = crate::theta::u_field(x, ZERO, ZERO, &vecs, &pd.b, &t, [0, 0, 0]).unwrap();
            let p0 = psi(x);
            let lhs = e * p0 - psi_xx + u * p0;
            assert!(lhs.norm() < 1e-6 * (e * p0).norm().max(psi_xx.norm()), "{lhs}");
        }
    }

    #[test]
    fn abel_map_is_path_independent_and_vanishes_at_infinity() {
        let pd = hyperelliptic_periods(&HyperellipticCurve::real(&REFERENCE_CURVE).unwrap(), DEFAULT_QUAD_ORDER).unwrap();
        let pt = CurvePoint::from_x(c(0.5, 0.7), true).unwrap();
        let direct = flex_data(&pd, &pt, &[]).unwrap();
        let bent = flex_data(&pd, &pt, &[c(0.25, 0.2), c(0.3, 0.45)]).unwrap();
        for j in 0..2 {
            assert!((direct.a[j] - bent.a[j]).norm() < 1e-9);
        }
        let far = flex_data(&pd, &CurvePoint::from_x(c(400.0, 300.0), true).unwrap(), &[]).unwrap();
        assert!(far.a.iter().all(|a| a.norm() < 0.05));
    }

    #[test]
    fn pinched_curve_approaches_genus_one() {
        let target = hyperelliptic_periods(&HyperellipticCurve::real(&[-2.0, -1.0, 2.0]).unwrap(), DEFAULT_QUAD_ORDER).unwrap().b.entries()[(0, 0)];
        let mut last = (f64::INFINITY, 0.0);
        for (eps, order) in [(1e-2, 512), (1e-3, 2048), (1e-4, 8192)] {
            let curve = HyperellipticCurve::real(&[-2.0, -1.0, 0.5, 0.5 + eps, 2.0]).unwrap();
            let b = hyperelliptic_periods(&curve, order).unwrap().b.entries().clone();
            let d = (b[(0, 0)] - target).norm();
            assert!(d < 0.05 * last.0, "eps {eps}: {d}");
            if last.1 > 0.0 {
                // the vanishing cycle's self-period grows like ln(1/eps)/pi
                let growth = b[(1, 1)].im - last.1;
                assert!((growth - 10f64.ln() / PI).abs() < 1e-3, "{growth}");
            }
            last = (d, b[(1, 1)].im);
        }
        assert!(last.0 < 1e-9);
    }

    #[test]
    fn json_has_fields() {
        let curve = HyperellipticCurve::real(&[0.0, 1.0, 3.0]).unwrap();
        let pd = hyperelliptic_periods(&curve, 64).unwrap();
        let s = period_json(&pd, None);
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        for k in ["a_periods", "b_periods", "b_matrix", "jet_coeffs"] {
            assert!(v.get(k).is_some());
        }
    }
}
