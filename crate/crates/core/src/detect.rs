//! Normalized residuals of the Jacobian criteria.
//!
//! Every residual is `|sum of terms| / sum |terms|` at a point, so it lies in
//! `[0, 1]` and is invariant under rescaling of theta and under the weighted
//! gauge of the directions.

use crate::curve::KPVectors;
use crate::error::{Error, Result};
use crate::theta::{
    affine_point, log_theta_jet, theta_jet, vnorm, Characteristic, RiemannMatrix, Truncation, DEFAULT_DIVISOR_FLOOR,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Points with `|d_U theta| / scale` below this are treated as near the singular locus.
pub const SINGULAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub criterion: String,
    pub max: f64,
    pub mean: f64,
    /// largest sum of term magnitudes met at any point
    pub normalization: f64,
    pub samples: usize,
    pub skipped: usize,
    pub excluded: usize,
    pub tol: f64,
    pub params_hash: String,
    pub converged: Option<bool>,
    pub notes: Vec<String>,
    pub per_point: Vec<f64>,
}

impl ResidualReport {
    fn build(criterion: &str, residuals: Vec<f64>, scales: &[f64], tol: f64, params: &str) -> Self {
        let n = residuals.len();
        let max = residuals.iter().cloned().fold(0.0, f64::max);
        let mean = if n == 0 { f64::NAN } else { residuals.iter().sum::<f64>() / n as f64 };
        Self {
            criterion: criterion.to_string(),
            max,
            mean,
            normalization: scales.iter().cloned().fold(0.0, f64::max),
            samples: n,
            skipped: 0,
            excluded: 0,
            tol,
            params_hash: params_hash(params),
            converged: None,
            notes: Vec::new(),
            per_point: residuals,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One line per sample: `index,residual`.
    pub fn per_point_csv(&self) -> String {
        let mut s = String::from("index,residual\n");
        for (i, r) in self.per_point.iter().enumerate() {
            s.push_str(&format!("{i},{r:.16e}\n"));
        }
        s
    }
}

pub fn params_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn describe(b: &RiemannMatrix, vecs: &[&[Complex64]]) -> String {
    let mut s = format!("{:?}", b.rows());
    for v in vecs {
        s.push_str(&format!("|{v:?}"));
    }
    s
}

/// Left side of the KP equation at a theta argument, with the sum of the
/// magnitudes of its five terms.
pub fn kp_point(point: &[Complex64], vecs: &KPVectors, b: &RiemannMatrix, trunc: &Truncation) -> Result<(Complex64, f64)> {
    let l = log_theta_jet(point, vecs, b, 6, trunc, DEFAULT_DIVISOR_FLOOR)?;
    let d = |a: usize, b: usize, c: usize| l.derivative(&[a, b, c]) * -2.0;
    let (u, ux, uxx, uxxxx, uyy, uxt) = (d(2, 0, 0), d(3, 0, 0), d(4, 0, 0), d(6, 0, 0), d(2, 2, 0), d(3, 0, 1));
    let terms = [uyy * 3.0, uxt * -4.0, ux * ux * -6.0, u * uxx * -6.0, uxxxx];
    Ok((terms.iter().sum(), terms.iter().map(|t| t.norm()).sum()))
}

/// Tensor grid of `(x, y, t)` sample values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub t: Vec<Complex64>,
}

impl Grid {
    /// `n` equispaced real values in `[-half, half]` along each axis.
    pub fn cube(n: usize, half: f64) -> Self {
        let axis: Vec<Complex64> = (0..n)
            .map(|k| Complex64::new(if n == 1 { 0.0 } else { -half + 2.0 * half * k as f64 / (n - 1) as f64 }, 0.0))
            .collect();
        Self { x: axis.clone(), y: axis.clone(), t: axis }
    }

    fn points(&self) -> Vec<(Complex64, Complex64, Complex64)> {
        let mut out = Vec::with_capacity(self.x.len() * self.y.len() * self.t.len());
        for &x in &self.x {
            for &y in &self.y {
                for &t in &self.t {
                    out.push((x, y, t));
                }
            }
        }
        out
    }
}

pub fn kp_residual(b: &RiemannMatrix, vecs: &KPVectors, grid: &Grid, trunc: &Truncation) -> Result<ResidualReport> {
    let pts = grid.points();
    let vals: Vec<Result<(Complex64, f64)>> = pts
        .par_iter()
        .map(|&(x, y, t)| kp_point(&affine_point(vecs, x, y, t), vecs, b, trunc))
        .collect();
    let mut res = Vec::new();
    let mut scales = Vec::new();
    let mut skipped = 0;
    for v in vals {
        match v {
            Ok((r, s)) => {
                res.push(r.norm() / s);
                scales.push(s);
            }
            Err(Error::NearDivisor { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if 2 * skipped > pts.len() {
        return Err(Error::Sampling(format!("{skipped} of {} grid points near the divisor", pts.len())));
    }
    let params = describe(b, &[&vecs.u, &vecs.v, &vecs.w, &vecs.z]) + &format!("{grid:?}");
    let mut rep = ResidualReport::build("kp", res, &scales, trunc.tol, &params);
    rep.skipped = skipped;
    Ok(rep)
}

/// Level-two theta constants and their `U, V, W` derivatives needed by the
/// Dubrovin system, for every characteristic.
fn level2_constants(b: &RiemannMatrix, vecs: &KPVectors, trunc: &Truncation) -> Result<Vec<[Complex64; 4]>> {
    let g = b.genus();
    let dirs = vec![vecs.u.clone(), vecs.v.clone(), vecs.w.clone()];
    Characteristic::all_half_vectors(g)
        .par_iter()
        .map(|eps| {
            let (jet, _) = crate::theta::level2_jet(eps, &vec![ZERO; g], b, &dirs, 4, trunc)?;
            Ok([
                jet.derivative(&[0, 0, 0]),
                jet.derivative(&[4, 0, 0]),
                jet.derivative(&[1, 0, 1]),
                jet.derivative(&[0, 2, 0]),
            ])
        })
        .collect()
}

/// Least-squares constant `c` in `(d_U^4 - 4 d_U d_W + 3 d_V^2 + c) Theta[eps](0) = 0`
/// over all characteristics, with the normalized row residuals.
pub fn dubrovin_residual(b: &RiemannMatrix, vecs: &KPVectors, trunc: &Truncation) -> Result<(Complex64, ResidualReport)> {
    let rows = level2_constants(b, vecs, trunc)?;
    let scale = rows.iter().flat_map(|r| r.iter()).map(|c| c.norm()).fold(0.0, f64::max);
    let tt: f64 = rows.iter().map(|r| r[0].norm_sqr()).sum();
    if scale == 0.0 || tt.sqrt() < 1e-12 * scale {
        return Err(Error::DegenerateSystem);
    }
    let h: Vec<Complex64> = rows.iter().map(|r| r[1] - r[2] * 4.0 + r[3] * 3.0).collect();
    let c = -rows.iter().zip(&h).map(|(r, hi)| r[0].conj() * hi).sum::<Complex64>() / tt;
    let mut res = Vec::new();
    let mut scales = Vec::new();
    for (r, hi) in rows.iter().zip(&h) {
        let s = r[1].norm() + 4.0 * r[2].norm() + 3.0 * r[3].norm() + (c * r[0]).norm();
        res.push((hi + c * r[0]).norm() / s);
        scales.push(s);
    }
    let params = describe(b, &[&vecs.u, &vecs.v, &vecs.w]);
    let mut rep = ResidualReport::build("dubrovin", res, &scales, trunc.tol, &params);
    rep.notes.push(format!("c = {c:.17e}"));
    Ok((c, rep))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisorPoint {
    pub z: Vec<Complex64>,
    /// `|theta(Z)| / scale`
    pub theta_rel: f64,
    /// `|d_U theta(Z)| / scale`
    pub du_rel: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisorSample {
    pub points: Vec<DivisorPoint>,
    pub failed_lines: usize,
    pub seed: u64,
}

fn theta_with_dirs(
    z: &[Complex64],
    b: &RiemannMatrix,
    dirs: &[Vec<Complex64>],
    trunc: &Truncation,
) -> Result<(crate::series::TaylorSeries, f64)> {
    theta_jet(z, b, &Characteristic::zero(b.genus()), dirs, 1, trunc)
}

/// Newton from an argument-principle start on the line `Z0 + t d`.
fn divisor_on_line(z0: &[Complex64], d: &[Complex64], b: &RiemannMatrix, trunc: &Truncation) -> Result<Option<Vec<Complex64>>> {
    let m = 128;
    let rho = 0.6;
    let at = |t: Complex64| -> Vec<Complex64> { z0.iter().zip(d).map(|(a, dd)| a + dd * t).collect() };
    let mut n0 = ZERO;
    let mut n1 = ZERO;
    for k in 0..m {
        let t = Complex64::from_polar(rho, 2.0 * PI * k as f64 / m as f64);
        let (jet, _) = theta_with_dirs(&at(t), b, &[d.to_vec()], trunc)?;
        let q = jet.coeff(&[1]) / jet.constant();
        n0 += q * t;
        n1 += q * t * t;
    }
    n0 /= m as f64;
    n1 /= m as f64;
    let count = n0.re.round();
    if count < 0.5 || (n0.re - count).abs() > 0.1 {
        return Ok(None);
    }
    let mut t = n1 / count;
    for _ in 0..60 {
        let (jet, scale) = theta_with_dirs(&at(t), b, &[d.to_vec()], trunc)?;
        let f = jet.constant();
        let df = jet.coeff(&[1]);
        if df.norm() == 0.0 {
            return Ok(None);
        }
        let step = f / df;
        t -= step;
        if f.norm() < 1e-14 * scale || step.norm() < 1e-15 * (1.0 + t.norm()) {
            let (jet, scale) = theta_with_dirs(&at(t), b, &[d.to_vec()], trunc)?;
            if jet.constant().norm() <= 1e-12 * scale && t.norm() < 3.0 * rho {
                return Ok(Some(at(t)));
            }
        }
    }
    Ok(None)
}

/// Up to `n` points of the theta divisor found on seeded random lines, with
/// at most `4 n` attempts.
pub fn sample_divisor(b: &RiemannMatrix, u: &[Complex64], n: usize, seed: u64, trunc: &Truncation) -> Result<DivisorSample> {
    if n == 0 {
        return Err(Error::Domain("sample size must be positive".into()));
    }
    let g = b.genus();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attempts = 4 * n;
    // draw every line up front so parallel evaluation stays deterministic
    let lines: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..attempts)
        .map(|_| {
            let re: Vec<f64> = (0..g).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let s: Vec<f64> = (0..g).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let z0: Vec<Complex64> = (0..g)
                .map(|j| Complex64::new(re[j], (0..g).map(|k| b.imag()[(j, k)] * s[k]).sum()))
                .collect();
            let raw: Vec<Complex64> = (0..g).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let nr = vnorm(&raw);
            (z0, raw.iter().map(|c| c / nr).collect())
        })
        .collect();
    let mut points = Vec::new();
    let mut failed = 0;
    for chunk in lines.chunks(n.max(8)) {
        let found: Vec<Result<Option<Vec<Complex64>>>> =
            chunk.par_iter().map(|(z0, d)| divisor_on_line(z0, d, b, trunc)).collect();
        for f in found {
            if points.len() == n {
                break;
            }
            match f? {
                Some(z) => {
                    let (jet, scale) = theta_with_dirs(&z, b, &[u.to_vec()], trunc)?;
                    let du_rel = jet.coeff(&[1]).norm() / scale;
                    points.push(DivisorPoint { theta_rel: jet.constant().norm() / scale, du_rel, flagged: du_rel < SINGULAR_FLOOR, z });
                }
                None => failed += 1,
            }
        }
        if points.len() == n {
            break;
        }
    }
    if points.is_empty() {
        return Err(Error::Sampling(format!("no divisor point found on {attempts} lines")));
    }
    Ok(DivisorSample { points, failed_lines: failed, seed })
}

/// Terms of the divisor equation at `Z`, with `|d_U theta| / scale`.
pub fn divisor_terms(z: &[Complex64], b: &RiemannMatrix, u: &[Complex64], v: &[Complex64], trunc: &Truncation) -> Result<([Complex64; 6], f64)> {
    let (jet, scale) = theta_jet(z, b, &Characteristic::zero(b.genus()), &[u.to_vec(), v.to_vec()], 4, trunc)?;
    let d = |i: usize, j: usize| jet.derivative(&[i, j]);
    let (a1, a2, a3, a4) = (d(1, 0), d(2, 0), d(3, 0), d(4, 0));
    let (bb, b1, b2) = (d(0, 1), d(1, 1), d(0, 2));
    let terms = [
        bb * bb * a2,
        -a2 * a2 * a2,
        a2 * a3 * a1 * 2.0,
        -bb * b1 * a1 * 2.0,
        b2 * a1 * a1,
        -a4 * a1 * a1,
    ];
    Ok((terms, a1.norm() / scale))
}

pub fn divisor_eq_residual(
    b: &RiemannMatrix,
    u: &[Complex64],
    v: &[Complex64],
    sample: &DivisorSample,
    trunc: &Truncation,
) -> Result<ResidualReport> {
    let vals: Vec<Result<([Complex64; 6], f64)>> =
        sample.points.par_iter().map(|p| divisor_terms(&p.z, b, u, v, trunc)).collect();
    let mut res = Vec::new();
    let mut scales = Vec::new();
    let mut excluded = 0;
    for v in vals {
        let (terms, du) = v?;
        if du < SINGULAR_FLOOR {
            excluded += 1;
            continue;
        }
        let s: f64 = terms.iter().map(|t| t.norm()).sum();
        res.push(terms.iter().sum::<Complex64>().norm() / s);
        scales.push(s);
    }
    if res.is_empty() {
        return Err(Error::Sampling("every divisor point is near the singular locus".into()));
    }
    let params = describe(b, &[u, v]) + &format!("seed {} n {}", sample.seed, sample.points.len());
    let mut rep = ResidualReport::build("divisor-eq", res, &scales, trunc.tol, &params);
    rep.excluded = excluded;
    Ok(rep)
}

/// Distance of `a` to the nearest period `m + B n` with small integer vectors.
fn lattice_distance(a: &[Complex64], b: &RiemannMatrix) -> f64 {
    let g = b.genus();
    // reduce imaginary part, then real part
    let y = b.imag().clone();
    let im = DVector::from_iterator(g, a.iter().map(|c| c.im));
    let n = y.lu().solve(&im).unwrap_or_else(|| DVector::zeros(g)).map(|x| x.round());
    let red: Vec<Complex64> = (0..g)
        .map(|j| a[j] - (0..g).map(|k| b.entries()[(j, k)] * n[k]).sum::<Complex64>())
        .map(|c| Complex64::new(c.re - c.re.round(), c.im))
        .collect();
    vnorm(&red)
}

/// Residuals of `(d_V - d_U^2 - 2p d_U + E - p^2) Theta[eps](A/2) = 0` for
/// all characteristics.
pub fn flex_residual(b: &RiemannMatrix, vecs: &KPVectors, trunc: &Truncation) -> Result<ResidualReport> {
    let flex = vecs.flex.as_ref().ok_or_else(|| Error::Domain("flex data missing".into()))?;
    let g = b.genus();
    let half: Vec<Complex64> = flex.a.iter().map(|c| c * 0.5).collect();
    let dirs = vec![vecs.u.clone(), vecs.v.clone()];
    let (p, e) = (flex.p, flex.e);
    let rows: Vec<Result<(f64, f64)>> = Characteristic::all_half_vectors(g)
        .par_iter()
        .map(|eps| {
            let (jet, _) = crate::theta::level2_jet(eps, &half, b, &dirs, 2, trunc)?;
            let terms = [
                jet.derivative(&[0, 1]),
                -jet.derivative(&[2, 0]),
                -p * jet.derivative(&[1, 0]) * 2.0,
                (e - p * p) * jet.derivative(&[0, 0]),
            ];
            let s: f64 = terms.iter().map(|t| t.norm()).sum();
            Ok((terms.iter().sum::<Complex64>().norm() / s, s))
        })
        .collect();
    let mut res = Vec::new();
    let mut scales = Vec::new();
    for r in rows {
        let (x, s) = r?;
        res.push(x);
        scales.push(s);
    }
    let params = describe(b, &[&vecs.u, &vecs.v, &flex.a, &[p, e]]);
    let mut rep = ResidualReport::build("flex", res, &scales, trunc.tol, &params);
    if lattice_distance(&flex.a, b) < 1e-6 {
        rep.notes.push("degenerate flex: A is close to a lattice vector".into());
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub multistarts: usize,
    /// objective evaluations per start for the simplex phase
    pub budget: usize,
    pub seed: u64,
    pub divisor_points: usize,
    /// Levenberg–Marquardt iterations per start
    pub polish_iters: usize,
    /// residual below which the search counts as converged
    pub threshold: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { multistarts: 8, budget: 1500, seed: 7, divisor_points: 24, polish_iters: 40, threshold: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub u: Vec<Complex64>,
    pub v: Vec<Complex64>,
    pub report: ResidualReport,
    pub converged: bool,
}

/// Gauge-fixed `(U, V)` from `4g` reals: `|U| = 1`, first nonvanishing
/// component of `U` real positive, `V` Hermitian-orthogonal to `U`.
pub fn gauge_uv(params: &[f64]) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let g = params.len() / 4;
    let u_raw: Vec<Complex64> = (0..g).map(|j| Complex64::new(params[2 * j], params[2 * j + 1])).collect();
    let v_raw: Vec<Complex64> = (0..g).map(|j| Complex64::new(params[2 * g + 2 * j], params[2 * g + 2 * j + 1])).collect();
    let lambda = crate::curve::gauge_factor(&u_raw)?;
    let u: Vec<Complex64> = u_raw.iter().map(|c| c * lambda).collect();
    let v2: Vec<Complex64> = v_raw.iter().map(|c| c * lambda * lambda).collect();
    Ok((u.clone(), project_v(&u, &v2)))
}

/// `V - (U^H V) U` for unit `U`.
pub fn project_v(u: &[Complex64], v: &[Complex64]) -> Vec<Complex64> {
    let dot: Complex64 = u.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
    v.iter().zip(u).map(|(b, a)| b - a * dot).collect()
}

fn residual_vector(b: &RiemannMatrix, params: &[f64], pts: &[Vec<Complex64>], trunc: &Truncation) -> Option<Vec<f64>> {
    let (u, v) = gauge_uv(params).ok()?;
    let mut out = Vec::with_capacity(2 * pts.len());
    for z in pts {
        let (terms, _) = divisor_terms(z, b, &u, &v, trunc).ok()?;
        let s: f64 = terms.iter().map(|t| t.norm()).sum();
        let r = terms.iter().sum::<Complex64>() / s;
        out.push(r.re);
        out.push(r.im);
    }
    Some(out)
}

fn objective(b: &RiemannMatrix, params: &[f64], pts: &[Vec<Complex64>], trunc: &Truncation) -> f64 {
    match residual_vector(b, params, pts, trunc) {
        Some(r) => r.iter().map(|x| x * x).sum::<f64>() / pts.len() as f64,
        None => f64::INFINITY,
    }
}

/// Derivative-free simplex descent.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], step: f64, budget: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let mut evals = n + 1;
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect() };
    while evals < budget {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        if (simplex[n].1 - simplex[0].1).abs() <= 1e-30 + 1e-15 * simplex[0].1.abs() {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for k in 0..n {
                centroid[k] += x[k] / n as f64;
            }
        }
        let worst = simplex[n].0.clone();
        let xr = lerp(&centroid, &worst, -1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = lerp(&centroid, &worst, -2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let x = lerp(&centroid, &worst, -0.5);
                let fx = f(&x);
                (x, fx)
            } else {
                let x = lerp(&centroid, &worst, 0.5);
                let fx = f(&x);
                (x, fx)
            };
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    s.0 = lerp(&best, &s.0, 0.5);
                    s.1 = f(&s.0);
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    simplex.swap_remove(0)
}

/// Levenberg–Marquardt on a residual vector with forward-difference Jacobian.
pub fn levenberg_marquardt<F: Fn(&[f64]) -> Option<Vec<f64>>>(f: F, x0: &[f64], iters: usize) -> Vec<f64> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let Some(mut r) = f(&x) else { return x };
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut mu = 1e-3;
    for _ in 0..iters {
        let m = r.len();
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for k in 0..n {
            let h = 1e-7 * (1.0 + x[k].abs());
            let mut xh = x.clone();
            xh[k] += h;
            let Some(rh) = f(&xh) else { return x };
            for i in 0..m {
                jac[(i, k)] = (rh[i] - r[i]) / h;
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * DVector::from_vec(r.clone());
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += mu * (1.0 + jtj[(k, k)]);
            }
            let Some(step) = a.lu().solve(&(-&grad)) else { break };
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(rn) = f(&xn) {
                let cn: f64 = rn.iter().map(|v| v * v).sum();
                if cn < cost {
                    x = xn;
                    r = rn;
                    cost = cn;
                    mu = (mu * 0.3).max(1e-12);
                    improved = true;
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved || cost < 1e-30 {
            break;
        }
    }
    x
}

/// Minimize the divisor-equation residual over gauge-fixed `(U, V)` given
/// `B` alone. Never certifies a negative answer: failure only sets
/// `converged = false`.
pub fn search_uv(b: &RiemannMatrix, opts: &SearchOptions, trunc: &Truncation) -> Result<SearchResult> {
    let g = b.genus();
    if g > 4 {
        return Err(Error::Domain("search supports g <= 4".into()));
    }
    let mut e1 = vec![ZERO; g];
    e1[0] = ONE;
    let sample = sample_divisor(b, &e1, opts.divisor_points, opts.seed, trunc)?;
    let pts: Vec<Vec<Complex64>> = sample.points.iter().map(|p| p.z.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let starts: Vec<Vec<f64>> = (0..opts.multistarts)
        .map(|_| (0..4 * g).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let runs: Vec<(Vec<f64>, f64)> = starts
        .par_iter()
        .map(|x0| {
            let (x, _) = nelder_mead(|p| objective(b, p, &pts, trunc), x0, 0.3, opts.budget);
            let x = levenberg_marquardt(|p| residual_vector(b, p, &pts, trunc), &x, opts.polish_iters);
            let fx = objective(b, &x, &pts, trunc);
            (x, fx)
        })
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)))
        .map(|(_, r)| r.clone())
        .ok_or(Error::DegenerateSystem)?;
    let (u, v) = gauge_uv(&best.0)?;
    let mut report = divisor_eq_residual(b, &u, &v, &sample, trunc)?;
    report.criterion = "search".into();
    let converged = report.max < opts.threshold;
    report.converged = Some(converged);
    report.notes.push(format!("multistarts {} budget {} seed {}", opts.multistarts, opts.budget, opts.seed));
    Ok(SearchResult { u, v, report, converged })
}

/// Random unit vector with entries uniform in the unit square, seeded.
pub fn random_unit(g: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let raw: Vec<Complex64> = (0..g).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let n = vnorm(&raw);
    raw.iter().map(|c| c / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{flex_data, genus1_data, hyperelliptic_periods, kp_vectors, CurvePoint, HyperellipticCurve};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn genus_one_kp_is_small() {
        let (b, v) = genus1_data(c(0.3, 1.1)).unwrap();
        let rep = kp_residual(&b, &v, &Grid::cube(4, 0.4), &Truncation::default()).unwrap();
        assert!(rep.max < 1e-8, "{}", rep.max);
    }

    #[test]
    fn genus_one_dubrovin_is_small() {
        let (b, v) = genus1_data(c(0.3, 1.1)).unwrap();
        let (cst, rep) = dubrovin_residual(&b, &v, &Truncation::default()).unwrap();
        assert!(rep.max < 1e-8 && cst.norm().is_finite(), "{}", rep.max);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let (x, fx) = nelder_mead(f, &[-1.2, 1.0], 0.5, 4000);
        assert!(fx < 1e-10 && (x[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn lm_fits_exponential() {
        let ts: Vec<f64> = (0..10).map(|k| k as f64 * 0.1).collect();
        let f = |p: &[f64]| Some(ts.iter().map(|t| p[0] * (p[1] * t).exp() - 2.0 * (-0.7 * t).exp()).collect());
        let x = levenberg_marquardt(f, &[1.0, 0.0], 50);
        assert!((x[0] - 2.0).abs() < 1e-8 && (x[1] + 0.7).abs() < 1e-8);
    }

    #[test]
    fn genus_one_divisor_is_one_point() {
        let (b, _) = genus1_data(c(0.2, 0.9)).unwrap();
        let s = sample_divisor(&b, &[ONE], 6, 3, &Truncation::default()).unwrap();
        let tau = c(0.2, 0.9);
        for p in &s.points {
            let d = p.z[0] - (tau + 1.0) * 0.5;
            let n = (d.im / tau.im).round();
            let r = d - tau * n;
            assert!((r - r.re.round()).norm() < 1e-9);
            assert!(p.theta_rel <= 1e-12);
        }
    }

    #[test]
    fn divisor_sampling_is_deterministic() {
        let b = RiemannMatrix::from_rows(&[vec![c(0.1, 1.0), c(0.2, 0.3)], vec![c(0.2, 0.3), c(-0.1, 1.2)]]).unwrap();
        let u = vec![c(0.6, 0.0), c(0.8, 0.0)];
        let t = Truncation::default();
        let a = sample_divisor(&b, &u, 5, 9, &t).unwrap();
        let bb = sample_divisor(&b, &u, 5, 9, &t).unwrap();
        assert_eq!(a, bb);
    }

    #[test]
    fn flex_small_on_genus_one_curve() {
        let curve = HyperellipticCurve::real(&[0.0, 1.0, 3.0]).unwrap();
        let pd = hyperelliptic_periods(&curve, 200).unwrap();
        let mut v = kp_vectors(&pd).unwrap();
        for x in [c(0.5, 0.7), c(-0.4, 1.2), c(2.0, 0.3)] {
            v.flex = Some(flex_data(&pd, &CurvePoint::from_x(x, true).unwrap(), &[]).unwrap());
            let rep = flex_residual(&pd.b, &v, &Truncation::default()).unwrap();
            assert!(rep.max < 1e-7, "{x}: {}", rep.max);
        }
    }

    #[test]
    fn gauge_projection() {
        let (u, v) = gauge_uv(&[0.3, -0.2, 0.5, 0.1, 0.7, 0.2, -0.1, 0.4]).unwrap();
        assert!((vnorm(&u) - 1.0).abs() < 1e-14);
        assert!(u[0].im.abs() < 1e-15 && u[0].re > 0.0);
        let dot: Complex64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
        assert!(dot.norm() < 1e-15);
    }
}
