//! Complex Calogero–Moser dynamics and the motion of zeros of `tau(x, y)`.
//!
//! The equations of motion are `x_i'' = 2 w_i`, with `w_i` the linear Laurent
//! coefficient of `u = 2 sum (x - x_j)^{-2}` at `x_i`. For the rational kernel
//! this is `x_i'' = -8 sum_{j != i} (x_i - x_j)^{-3}`, generated by
//! `H = sum p_i^2 / 2 - sum_{i<j} 4 / (x_i - x_j)^2`. The trigonometric and
//! elliptic kernels replace `1/d^2` by `1/sin^2 d` and `p(d)`.

use crate::error::{Error, Result};
use crate::series::{Monomials, TaylorSeries};
use crate::theta::{theta_jet, Characteristic, RiemannMatrix, Truncation};
use crate::weierstrass::Lattice;
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

pub const COLLISION_FLOOR: f64 = 1e-7;
const CONTOUR_NODES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CmKind {
    Rational,
    Trigonometric,
    Elliptic(Lattice),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmState {
    pub y: Complex64,
    pub x: Vec<Complex64>,
    pub p: Vec<Complex64>,
    pub kind: CmKind,
}

impl CmState {
    pub fn new(y: Complex64, x: Vec<Complex64>, p: Vec<Complex64>, kind: CmKind) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Domain("at least one particle required".into()));
        }
        if x.len() != p.len() {
            return Err(Error::Dimension { expected: x.len(), got: p.len() });
        }
        let s = Self { y, x, p, kind };
        s.check_collisions()?;
        Ok(s)
    }

    pub fn rational(x: Vec<Complex64>, p: Vec<Complex64>) -> Result<Self> {
        Self::new(ZERO, x, p, CmKind::Rational)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn check_collisions(&self) -> Result<()> {
        check_collisions(&self.x)
    }
}

fn check_collisions(x: &[Complex64]) -> Result<()> {
    for i in 0..x.len() {
        for j in 0..i {
            let d = (x[i] - x[j]).norm();
            if d < COLLISION_FLOOR {
                return Err(Error::Collision { i: j, j: i, distance: d });
            }
        }
    }
    Ok(())
}

/// `(V(d), -V'(d))` for the pair potential `V`.
fn kernel(kind: &CmKind, d: Complex64) -> Result<(Complex64, Complex64)> {
    Ok(match kind {
        CmKind::Rational => {
            let d2 = d * d;
            (-4.0 / d2, -8.0 / (d2 * d))
        }
        CmKind::Trigonometric => {
            let s = d.sin();
            let s2 = s * s;
            (-4.0 / s2, -d.cos() * 8.0 / (s2 * s))
        }
        CmKind::Elliptic(l) => {
            let (p, dp) = l.wp(d)?;
            (p * -4.0, dp * 4.0)
        }
    })
}

fn accelerations(kind: &CmKind, x: &[Complex64]) -> Result<Vec<Complex64>> {
    check_collisions(x)?;
    let n = x.len();
    let mut a = vec![ZERO; n];
    for i in 0..n {
        for j in 0..i {
            let (_, f) = kernel(kind, x[i] - x[j])?;
            a[i] += f;
            a[j] -= f;
        }
    }
    Ok(a)
}

/// Accelerations `x_i''`.
pub fn cm_rhs(state: &CmState) -> Result<Vec<Complex64>> {
    accelerations(&state.kind, &state.x)
}

pub fn cm_hamiltonian(state: &CmState) -> Result<Complex64> {
    state.check_collisions()?;
    let mut h: Complex64 = state.p.iter().map(|p| p * p * 0.5).sum();
    for i in 0..state.len() {
        for j in 0..i {
            h += kernel(&state.kind, state.x[i] - state.x[j])?.0;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub y: Complex64,
    pub x: Vec<Complex64>,
    pub p: Vec<Complex64>,
    pub a: Vec<Complex64>,
}

/// Accepted integration steps with cubic Hermite dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub kind: CmKind,
    pub samples: Vec<TrajectorySample>,
    pub tol: f64,
}

impl Trajectory {
    pub fn y_start(&self) -> Complex64 {
        self.samples[0].y
    }

    pub fn y_end(&self) -> Complex64 {
        self.samples[self.samples.len() - 1].y
    }

    /// Positions, velocities and accelerations at `y` on the integration path.
    pub fn at(&self, y: Complex64) -> Result<TrajectorySample> {
        let (y0, y1) = (self.y_start(), self.y_end());
        let span = y1 - y0;
        let s = if span.norm() == 0.0 { 0.0 } else { ((y - y0) / span).re };
        if (y - y0 - span * s).norm() > 1e-12 * (1.0 + span.norm()) || !(-1e-12..=1.0 + 1e-12).contains(&s) {
            return Err(Error::Domain(format!("y = {y} is off the integration path")));
        }
        let k = self
            .samples
            .partition_point(|smp| ((smp.y - y0) / span).re <= s)
            .clamp(1, self.samples.len() - 1);
        let (a, b) = (&self.samples[k - 1], &self.samples[k]);
        let h = b.y - a.y;
        let th = if h.norm() == 0.0 { 0.0 } else { ((y - a.y) / h).re };
        let (h00, h10, h01, h11) = hermite(th);
        let n = a.x.len();
        let mut x = vec![ZERO; n];
        let mut p = vec![ZERO; n];
        for i in 0..n {
            x[i] = a.x[i] * h00 + a.p[i] * h * h10 + b.x[i] * h01 + b.p[i] * h * h11;
            p[i] = a.p[i] * h00 + a.a[i] * h * h10 + b.p[i] * h01 + b.a[i] * h * h11;
        }
        let acc = accelerations(&self.kind, &x)?;
        Ok(TrajectorySample { y, x, p, a: acc })
    }

    /// CSV: `y, im_y`, then per particle `re_x, im_x, re_v, im_v`, then `re_H, im_H`.
    pub fn to_csv(&self) -> Result<String> {
        let n = self.samples[0].x.len();
        let mut s = String::from("y,im_y");
        for i in 0..n {
            let _ = write!(s, ",re_x{i},im_x{i},re_v{i},im_v{i}");
        }
        s.push_str(",re_H,im_H\n");
        for smp in &self.samples {
            let h = cm_hamiltonian(&CmState { y: smp.y, x: smp.x.clone(), p: smp.p.clone(), kind: self.kind })?;
            let _ = write!(s, "{:.16e},{:.16e}", smp.y.re, smp.y.im);
            for i in 0..n {
                let _ = write!(s, ",{:.16e},{:.16e},{:.16e},{:.16e}", smp.x[i].re, smp.x[i].im, smp.p[i].re, smp.p[i].im);
            }
            let _ = writeln!(s, ",{:.16e},{:.16e}", h.re, h.im);
        }
        Ok(s)
    }
}

fn hermite(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + t, -2.0 * t3 + 3.0 * t2, t3 - t2)
}

// Dormand–Prince 5(4) tableau
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand–Prince integration along the straight path from
/// `state0.y` to `y_end`, with local error per step at most `tol` (relative to
/// `max(1, |component|)`).
pub fn integrate(state0: &CmState, y_end: Complex64, tol: f64) -> Result<Trajectory> {
    if !(1e-13..=1e-6).contains(&tol) {
        return Err(Error::Domain(format!("tolerance {tol:e} outside [1e-13, 1e-6]")));
    }
    let n = state0.len();
    let kind = state0.kind;
    let span = y_end - state0.y;
    let rhs = |z: &[Complex64]| -> Result<Vec<Complex64>> {
        let a = accelerations(&kind, &z[..n])?;
        let mut out = Vec::with_capacity(2 * n);
        out.extend(z[n..].iter().map(|p| p * span));
        out.extend(a.iter().map(|a| a * span));
        Ok(out)
    };
    let mut z: Vec<Complex64> = state0.x.iter().chain(&state0.p).cloned().collect();
    let mut s = 0.0;
    let mut h = 0.01f64.min(1.0);
    let a0 = accelerations(&kind, &state0.x)?;
    let mut samples = vec![TrajectorySample { y: state0.y, x: state0.x.clone(), p: state0.p.clone(), a: a0 }];
    if span.norm() == 0.0 {
        return Ok(Trajectory { kind, samples, tol });
    }
    let mut k1 = rhs(&z)?;
    while s < 1.0 {
        if s + h > 1.0 {
            h = 1.0 - s;
        }
        if h < 1e-14 {
            let y = state0.y + span * s;
            check_collisions(&z[..n])?;
            return Err(Error::StepUnderflow(y));
        }
        let mut ks = vec![k1.clone()];
        let mut failed = false;
        for st in 1..7 {
            let zt: Vec<Complex64> = (0..2 * n)
                .map(|m| z[m] + (0..st).map(|q| ks[q][m] * (A[st][q] * h)).sum::<Complex64>())
                .collect();
            match rhs(&zt) {
                Ok(k) => ks.push(k),
                Err(Error::Collision { .. }) | Err(Error::Pole(_)) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if failed {
            h *= 0.25;
            continue;
        }
        let z5: Vec<Complex64> = (0..2 * n).map(|m| z[m] + (0..7).map(|q| ks[q][m] * (B5[q] * h)).sum::<Complex64>()).collect();
        // positions are weighed by the configuration diameter rather than
        // their modulus so that a rigid shift leaves the step sequence alone
        let diam = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| (z[i] - z[j]).norm()).fold(1.0, f64::max);
        let err = (0..2 * n)
            .map(|m| {
                let e: Complex64 = (0..7).map(|q| ks[q][m] * ((B5[q] - B4[q]) * h)).sum();
                let weight = if m < n { diam } else { z[m].norm().max(z5[m].norm()).max(1.0) };
                e.norm() / (tol * weight)
            })
            .fold(0.0, f64::max);
        if err <= 1.0 {
            s += h;
            z = z5;
            k1 = ks[6].clone();
            let y = state0.y + span * s;
            let a: Vec<Complex64> = k1[n..].iter().map(|v| v / span).collect();
            samples.push(TrajectorySample { y, x: z[..n].to_vec(), p: z[n..].to_vec(), a });
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
    }
    if let Some(last) = samples.last_mut() {
        last.y = y_end;
    }
    Ok(Trajectory { kind, samples, tol })
}

/// Value and first two partials of `tau` at a point, with a magnitude scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauJet {
    pub f: Complex64,
    pub fx: Complex64,
    pub fy: Complex64,
    pub fxx: Complex64,
    pub fxy: Complex64,
    pub fyy: Complex64,
    pub scale: f64,
}

/// An entire function of `x` depending analytically on `y`.
pub trait Tau: Sync {
    fn jet(&self, x: Complex64, y: Complex64) -> Result<TauJet>;
    /// How `y`-derivatives are obtained, for metadata.
    fn y_method(&self) -> &'static str {
        "analytic"
    }
}

/// `tau(x, y) = theta(U x + V y + Z | B)`.
pub struct ThetaTau {
    pub b: RiemannMatrix,
    pub u: Vec<Complex64>,
    pub v: Vec<Complex64>,
    pub z: Vec<Complex64>,
    pub trunc: Truncation,
}

impl Tau for ThetaTau {
    fn jet(&self, x: Complex64, y: Complex64) -> Result<TauJet> {
        let pt: Vec<Complex64> = (0..self.z.len()).map(|j| self.z[j] + self.u[j] * x + self.v[j] * y).collect();
        let (j, scale) = theta_jet(&pt, &self.b, &Characteristic::zero(self.b.genus()), &[self.u.clone(), self.v.clone()], 2, &self.trunc)?;
        Ok(TauJet {
            f: j.constant(),
            fx: j.derivative(&[1, 0]),
            fy: j.derivative(&[0, 1]),
            fxx: j.derivative(&[2, 0]),
            fxy: j.derivative(&[1, 1]),
            fyy: j.derivative(&[0, 2]),
            scale,
        })
    }
}

/// `tau = prod (x - x_i(y))` with zeros following a trajectory. An optional
/// kick adds `dp (y - y_kick)` to one zero after the fact, which breaks the
/// dynamics without touching the data at `y_kick`.
pub struct ProductTau {
    pub trajectory: Trajectory,
    pub kick: Option<(usize, Complex64, Complex64)>,
}

impl ProductTau {
    pub fn new(trajectory: Trajectory) -> Self {
        Self { trajectory, kick: None }
    }

    pub fn zeros(&self, y: Complex64) -> Result<(Vec<Complex64>, Vec<Complex64>, Vec<Complex64>)> {
        let s = self.trajectory.at(y)?;
        let (mut x, mut p) = (s.x, s.p);
        if let Some((i, dp, yk)) = self.kick {
            x[i] += dp * (y - yk);
            p[i] += dp;
        }
        Ok((x, p, s.a))
    }
}

fn product_jet(x: Complex64, zeros: &[Complex64], vel: &[Complex64], acc: &[Complex64]) -> TauJet {
    let mono = Arc::new(Monomials::new(2, 2));
    let mut prod = TaylorSeries::zeros(mono.clone());
    prod.coeffs_mut()[0] = ONE;
    let idx = |e: &[usize]| mono.index_of(e).expect("monomial in range");
    let mut scale = 1.0;
    for i in 0..zeros.len() {
        let mut f = TaylorSeries::zeros(mono.clone());
        let c = f.coeffs_mut();
        c[idx(&[0, 0])] = x - zeros[i];
        c[idx(&[1, 0])] = ONE;
        c[idx(&[0, 1])] = -vel[i];
        c[idx(&[0, 2])] = -acc[i] * 0.5;
        prod = prod.mul(&f);
        scale *= x.norm() + zeros[i].norm() + 1.0;
    }
    TauJet {
        f: prod.constant(),
        fx: prod.derivative(&[1, 0]),
        fy: prod.derivative(&[0, 1]),
        fxx: prod.derivative(&[2, 0]),
        fxy: prod.derivative(&[1, 1]),
        fyy: prod.derivative(&[0, 2]),
        scale,
    }
}

impl Tau for ProductTau {
    fn jet(&self, x: Complex64, y: Complex64) -> Result<TauJet> {
        let (z, v, a) = self.zeros(y)?;
        Ok(product_jet(x, &z, &v, &a))
    }
}

/// Zeros given as explicit functions of `y`: `(x_i, x_i', x_i'')`.
pub struct StaticProductTau {
    pub zeros: Vec<Complex64>,
}

impl Tau for StaticProductTau {
    fn jet(&self, x: Complex64, _y: Complex64) -> Result<TauJet> {
        let z = vec![ZERO; self.zeros.len()];
        Ok(product_jet(x, &self.zeros, &z, &z))
    }
}

/// A user callable; every derivative comes from Richardson-extrapolated
/// central differences with step `1e-3`.
pub struct FnTau<F: Fn(Complex64, Complex64) -> Complex64 + Sync> {
    pub f: F,
}

fn richardson<G: Fn(f64) -> Complex64>(d: G, h: f64) -> Complex64 {
    let a = d(h);
    let b = d(h / 2.0);
    let c = d(h / 4.0);
    let ab = (b * 4.0 - a) / 3.0;
    let bc = (c * 4.0 - b) / 3.0;
    (bc * 16.0 - ab) / 15.0
}

impl<F: Fn(Complex64, Complex64) -> Complex64 + Sync> Tau for FnTau<F> {
    fn jet(&self, x: Complex64, y: Complex64) -> Result<TauJet> {
        let f = &self.f;
        let h = 1e-3;
        let f0 = f(x, y);
        let fx = richardson(|h| (f(x + h, y) - f(x - h, y)) / (2.0 * h), h);
        let fy = richardson(|h| (f(x, y + h) - f(x, y - h)) / (2.0 * h), h);
        let fxx = richardson(|h| (f(x + h, y) - f0 * 2.0 + f(x - h, y)) / (h * h), h);
        let fyy = richardson(|h| (f(x, y + h) - f0 * 2.0 + f(x, y - h)) / (h * h), h);
        let fxy = richardson(|h| (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4.0 * h * h), h);
        Ok(TauJet { f: f0, fx, fy, fxx, fxy, fyy, scale: f0.norm().max(fx.norm()).max(1e-300) })
    }

    fn y_method(&self) -> &'static str {
        "central-difference"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroSample {
    pub y: Complex64,
    pub x: Vec<Complex64>,
    pub xdot: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroTrajectory {
    pub samples: Vec<ZeroSample>,
    pub y_method: String,
    /// order of the predictor between samples
    pub order: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOptions {
    pub samples: usize,
    pub substeps: usize,
    /// relative floor on `|tau_x|`
    pub floor: f64,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self { samples: 20, substeps: 8, floor: 1e-8 }
    }
}

fn velocity(tau: &dyn Tau, x: Complex64, y: Complex64, floor: f64) -> Result<Complex64> {
    let j = tau.jet(x, y)?;
    if j.fx.norm() < floor * j.scale {
        return Err(Error::SingularLocus { y, tau_x: j.fx.norm() / j.scale });
    }
    Ok(-j.fy / j.fx)
}

fn polish(tau: &dyn Tau, mut x: Complex64, y: Complex64, floor: f64) -> Result<Complex64> {
    for _ in 0..20 {
        let j = tau.jet(x, y)?;
        if j.fx.norm() < floor * j.scale {
            return Err(Error::SingularLocus { y, tau_x: j.fx.norm() / j.scale });
        }
        let step = j.f / j.fx;
        x -= step;
        if j.f.norm() <= 1e-14 * j.scale || step.norm() < 1e-15 * (1.0 + x.norm()) {
            break;
        }
    }
    Ok(x)
}

/// Continue simple zeros of `tau` from `y0` to `y_end` along `x' = -tau_y / tau_x`
/// with a fourth-order predictor and Newton polish after every substep.
pub fn track_zeros(tau: &dyn Tau, y0: Complex64, y_end: Complex64, seeds: &[Complex64], opts: &TrackOptions) -> Result<ZeroTrajectory> {
    if opts.samples == 0 || opts.substeps == 0 {
        return Err(Error::Domain("samples and substeps must be positive".into()));
    }
    for &s in seeds {
        let j = tau.jet(s, y0)?;
        if j.f.norm() > 1e-10 * j.scale {
            return Err(Error::Domain(format!("seed {s} is not a zero (|tau|/scale = {:.2e})", j.f.norm() / j.scale)));
        }
        if j.fx.norm() < opts.floor * j.scale {
            return Err(Error::SingularLocus { y: y0, tau_x: j.fx.norm() / j.scale });
        }
    }
    let h = (y_end - y0) / (opts.samples * opts.substeps) as f64;
    let record = |xs: &[Complex64], y: Complex64| -> Result<ZeroSample> {
        let xdot = xs.iter().map(|&x| velocity(tau, x, y, opts.floor)).collect::<Result<Vec<_>>>()?;
        Ok(ZeroSample { y, x: xs.to_vec(), xdot })
    };
    let mut xs: Vec<Complex64> = seeds.iter().map(|&s| polish(tau, s, y0, opts.floor)).collect::<Result<_>>()?;
    let mut samples = vec![record(&xs, y0)?];
    let mut y = y0;
    for k in 0..opts.samples {
        for _ in 0..opts.substeps {
            xs = xs
                .par_iter()
                .map(|&x| {
                    let k1 = velocity(tau, x, y, opts.floor)?;
                    let k2 = velocity(tau, x + k1 * h * 0.5, y + h * 0.5, opts.floor)?;
                    let k3 = velocity(tau, x + k2 * h * 0.5, y + h * 0.5, opts.floor)?;
                    let k4 = velocity(tau, x + k3 * h, y + h, opts.floor)?;
                    let pred = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                    polish(tau, pred, y + h, opts.floor)
                })
                .collect::<Result<_>>()?;
            y += h;
        }
        y = y0 + (y_end - y0) * ((k + 1) as f64 / opts.samples as f64);
        check_collisions(&xs).map_err(|_| Error::SingularLocus { y, tau_x: 0.0 })?;
        samples.push(record(&xs, y)?);
    }
    Ok(ZeroTrajectory { samples, y_method: tau.y_method().to_string(), order: 4 })
}

/// Simple zeros of `tau(., y)` in the box `|Re(x - center)| <= half.0`,
/// `|Im(x - center)| <= half.1`, found by Newton from a seed grid.
pub fn find_zeros(tau: &dyn Tau, y: Complex64, center: Complex64, half: (f64, f64), grid: usize) -> Result<Vec<Complex64>> {
    let seeds: Vec<Complex64> = (0..grid)
        .flat_map(|a| {
            (0..grid).map(move |b| {
                let s = |k: usize| if grid == 1 { 0.0 } else { 2.0 * k as f64 / (grid - 1) as f64 - 1.0 };
                center + Complex64::new(half.0 * s(a), half.1 * s(b))
            })
        })
        .collect();
    let found: Vec<Option<Complex64>> = seeds
        .par_iter()
        .map(|&s| {
            let mut x = s;
            for _ in 0..40 {
                let j = tau.jet(x, y).ok()?;
                if j.fx.norm() < 1e-12 * j.scale {
                    return None;
                }
                let mut step = j.f / j.fx;
                if step.norm() > 0.5 {
                    step *= 0.5 / step.norm();
                }
                x -= step;
                if step.norm() < 1e-14 * (1.0 + x.norm()) {
                    break;
                }
            }
            let j = tau.jet(x, y).ok()?;
            let inside = (x.re - center.re).abs() <= half.0 && (x.im - center.im).abs() <= half.1;
            (inside && j.f.norm() < 1e-12 * j.scale).then_some(x)
        })
        .collect();
    let mut zeros: Vec<Complex64> = vec![];
    for x in found.into_iter().flatten() {
        if zeros.iter().all(|z| (z - x).norm() > 1e-7) {
            zeros.push(x);
        }
    }
    zeros.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(zeros)
}

/// Laurent data of `u` at a double pole: `u = lead / (x - x_i)^2 + v + w (x - x_i) + ...`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaurentData {
    pub lead: Complex64,
    pub residue: Complex64,
    pub v: Complex64,
    pub w: Complex64,
    pub radius: f64,
}

/// Trapezoidal contour integrals of `u (x - x_i)^k` on `|x - x_i| = radius`.
pub fn laurent_coeffs<F: Fn(Complex64) -> Result<Complex64>>(u: F, xi: Complex64, radius: f64) -> Result<LaurentData> {
    let m = CONTOUR_NODES;
    let mut c = [ZERO; 4]; // k = -2, -1, 0, 1
    for n in 0..m {
        let e = Complex64::from_polar(radius, 2.0 * PI * n as f64 / m as f64);
        let val = u(xi + e)?;
        c[0] += val * e * e;
        c[1] += val * e;
        c[2] += val;
        c[3] += val / e;
    }
    let c: Vec<Complex64> = c.iter().map(|v| v / m as f64).collect();
    if (c[0] - 2.0).norm() > 1e-6 {
        return Err(Error::NotCmPole(c[0]));
    }
    Ok(LaurentData { lead: c[0], residue: c[1], v: c[2], w: c[3], radius })
}

/// `u = -2 d_x^2 ln tau` from a tau jet.
pub fn u_from_jet(j: &TauJet) -> Complex64 {
    let q = j.fx / j.f;
    (j.fxx / j.f - q * q) * -2.0
}

pub const DEFAULT_RADIUS_CAP: f64 = 0.1;

/// Contour radius: half the distance to the nearest other zero, capped.
pub fn default_radius(zeros: &[Complex64], i: usize, cap: f64) -> f64 {
    zeros
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, z)| 0.5 * (z - zeros[i]).norm())
        .fold(cap, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidueEntry {
    pub x: Complex64,
    /// residue of `d_y^2 ln tau + 2 (d_x^2 ln tau)^2`
    pub residue: Complex64,
    pub xddot: Complex64,
    pub w: Complex64,
    /// `x'' - 2 w`
    pub mismatch: Complex64,
}

/// Residue condition and equations of motion at each zero.
pub fn residue_condition(tau: &dyn Tau, y: Complex64, zeros: &[Complex64], floor: f64) -> Result<Vec<ResidueEntry>> {
    residue_condition_within(tau, y, zeros, floor, DEFAULT_RADIUS_CAP)
}

/// As [`residue_condition`] with a caller-chosen cap on contour radii, for
/// functions with zeros outside the tracked set.
pub fn residue_condition_within(tau: &dyn Tau, y: Complex64, zeros: &[Complex64], floor: f64, cap: f64) -> Result<Vec<ResidueEntry>> {
    (0..zeros.len())
        .into_par_iter()
        .map(|i| {
            let xi = zeros[i];
            let radius = default_radius(zeros, i, cap);
            let j0 = tau.jet(xi, y)?;
            if j0.fx.norm() < floor * j0.scale {
                return Err(Error::SingularLocus { y, tau_x: j0.fx.norm() / j0.scale });
            }
            let xdot = -j0.fy / j0.fx;
            let xddot = -(j0.fyy + j0.fxy * xdot * 2.0 + j0.fxx * xdot * xdot) / j0.fx;
            let m = CONTOUR_NODES;
            let mut residue = ZERO;
            for n in 0..m {
                let e = Complex64::from_polar(radius, 2.0 * PI * n as f64 / m as f64);
                let j = tau.jet(xi + e, y)?;
                let qx = j.fx / j.f;
                let qy = j.fy / j.f;
                let lyy = j.fyy / j.f - qy * qy;
                let lxx = j.fxx / j.f - qx * qx;
                residue += (lyy + lxx * lxx * 2.0) * e;
            }
            residue /= m as f64;
            let ld = laurent_coeffs(|x| tau.jet(x, y).map(|j| u_from_jet(&j)), xi, radius)?;
            Ok(ResidueEntry { x: xi, residue, xddot, w: ld.w, mismatch: xddot - ld.w * 2.0 })
        })
        .collect()
}
