//! Wave series of the rational Calogero–Moser system and pseudo-differential
//! operator algebra over partial fractions.
//!
//! Coefficients that depend on `y` are carried as truncated Taylor jets in
//! `delta = y - y0` with poles pinned at the positions at `y0`; moving a pole
//! then shows up as higher-order poles in the higher jet components, and `d/dy`
//! is a shift of jet components.

use crate::cm::{cm_rhs, CmKind, CmState};
use crate::error::{Error, Result};
use num_complex::Complex64 as C64;
use std::fmt::{self, Debug, Write as _};
use std::ops::{Add, Mul, Neg, Sub};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Poles closer than this (but not equal) are rejected as degenerate.
pub const POLE_FLOOR: f64 = 1e-10;
/// Residues below this are roundoff.
pub const RESIDUE_TOL: f64 = 1e-12;
pub const DEFAULT_DEPTH: usize = 12;

/// Coefficient ring for rational functions and operators.
pub trait Coef:
    Clone + Debug + PartialEq + Send + Sync + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn from_c(c: C64) -> Self;
    fn scale(&self, c: C64) -> Self;
    fn is_zero(&self) -> bool;
    fn magnitude(&self) -> f64;
    fn value(&self) -> C64;
}

impl Coef for C64 {
    fn from_c(c: C64) -> Self {
        c
    }
    fn scale(&self, c: C64) -> Self {
        self * c
    }
    fn is_zero(&self) -> bool {
        *self == ZERO
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
    fn value(&self) -> C64 {
        *self
    }
}

const EXACT: usize = usize::MAX;

/// Truncated Taylor series in `delta`, known through `valid - 1`.
/// Exact constants have unlimited validity.
#[derive(Clone, PartialEq)]
pub struct YJet {
    c: Vec<C64>,
    valid: usize,
}

impl Debug for YJet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.c)?;
        if self.valid != EXACT {
            write!(f, "+O(d^{})", self.valid)?;
        }
        Ok(())
    }
}

impl YJet {
    pub fn exact(v: C64) -> Self {
        Self { c: vec![v], valid: EXACT }
    }

    pub fn new(c: Vec<C64>) -> Self {
        let valid = c.len();
        Self { c, valid }
    }

    pub fn valid(&self) -> usize {
        self.valid
    }

    pub fn component(&self, k: usize) -> C64 {
        self.c.get(k).copied().unwrap_or(ZERO)
    }

    pub fn dy(&self) -> Self {
        let c = self.c.iter().enumerate().skip(1).map(|(k, v)| v * k as f64).collect();
        let valid = if self.valid == EXACT { EXACT } else { self.valid.saturating_sub(1) };
        Self { c, valid }
    }

    fn len_for(valid: usize, a: usize, b: usize) -> usize {
        a.max(b).min(valid)
    }

    pub fn recip(&self) -> Self {
        let a0 = self.component(0);
        let n = if self.valid == EXACT { 1.max(self.c.len()) } else { self.valid };
        let mut b = vec![ZERO; n];
        if self.valid == EXACT && self.c.len() <= 1 {
            return Self::exact(ONE / a0);
        }
        b[0] = ONE / a0;
        for k in 1..n {
            let s: C64 = (1..=k).map(|j| self.component(j) * b[k - j]).sum();
            b[k] = -s / a0;
        }
        Self { c: b, valid: self.valid }
    }
}

impl Add for YJet {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let valid = self.valid.min(o.valid);
        let n = Self::len_for(valid, self.c.len(), o.c.len());
        Self { c: (0..n).map(|k| self.component(k) + o.component(k)).collect(), valid }
    }
}

impl Sub for YJet {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Neg for YJet {
    type Output = Self;
    fn neg(self) -> Self {
        Self { c: self.c.iter().map(|v| -v).collect(), valid: self.valid }
    }
}

impl Mul for YJet {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let valid = self.valid.min(o.valid);
        if self.c.is_empty() || o.c.is_empty() {
            return Self { c: vec![], valid };
        }
        let n = (self.c.len() + o.c.len() - 1).min(valid);
        let mut c = vec![ZERO; n];
        for (i, a) in self.c.iter().enumerate() {
            for (j, b) in o.c.iter().enumerate() {
                if i + j < n {
                    c[i + j] += a * b;
                }
            }
        }
        Self { c, valid }
    }
}

impl Coef for YJet {
    fn from_c(c: C64) -> Self {
        Self::exact(c)
    }
    fn scale(&self, s: C64) -> Self {
        Self { c: self.c.iter().map(|v| v * s).collect(), valid: self.valid }
    }
    fn is_zero(&self) -> bool {
        self.c.iter().all(|v| *v == ZERO)
    }
    fn magnitude(&self) -> f64 {
        self.c.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
    fn value(&self) -> C64 {
        self.component(0)
    }
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, t| acc * (n - t) as f64 / (t + 1) as f64)
}

/// `i (i-1) ... (i-k+1) / k!` for any integer `i`.
fn gen_binom(i: i32, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, t| acc * (i - t as i32) as f64 / (t + 1) as f64)
}

/// Principal part at one pole: `coeffs[k-1]` multiplies `(x - at)^{-k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pole<T> {
    pub at: C64,
    pub coeffs: Vec<T>,
}

/// Polynomial part plus principal parts.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalFunction<T> {
    pub poly: Vec<T>,
    pub poles: Vec<Pole<T>>,
}

fn push_at<T: Coef>(v: &mut Vec<T>, idx: usize, c: T) {
    while v.len() <= idx {
        v.push(T::from_c(ZERO));
    }
    let cur = std::mem::replace(&mut v[idx], T::from_c(ZERO));
    v[idx] = cur + c;
}

impl<T: Coef> RationalFunction<T> {
    pub fn zero() -> Self {
        Self { poly: vec![], poles: vec![] }
    }

    pub fn constant(c: T) -> Self {
        Self { poly: vec![c], poles: vec![] }.canonical()
    }

    pub fn from_poly(poly: Vec<T>) -> Self {
        Self { poly, poles: vec![] }.canonical()
    }

    /// `c (x - at)^{-k}`.
    pub fn pole_term(at: C64, k: usize, c: T) -> Self {
        assert!(k >= 1);
        let mut coeffs = vec![T::from_c(ZERO); k];
        coeffs[k - 1] = c;
        Self { poly: vec![], poles: vec![Pole { at, coeffs }] }.canonical()
    }

    /// Trailing zero coefficients and empty poles removed.
    pub fn canonical(mut self) -> Self {
        while self.poly.last().is_some_and(|c| c.is_zero()) {
            self.poly.pop();
        }
        for p in &mut self.poles {
            while p.coeffs.last().is_some_and(|c| c.is_zero()) {
                p.coeffs.pop();
            }
        }
        self.poles.retain(|p| !p.coeffs.is_empty());
        self
    }

    pub fn is_zero(&self) -> bool {
        self.poly.iter().all(|c| c.is_zero()) && self.poles.iter().all(|p| p.coeffs.iter().all(|c| c.is_zero()))
    }

    pub fn pole_locations(&self) -> Vec<C64> {
        self.poles.iter().map(|p| p.at).collect()
    }

    pub fn pole_order(&self, at: C64) -> usize {
        self.poles.iter().find(|p| p.at == at).map_or(0, |p| {
            p.coeffs.iter().rposition(|c| c.magnitude() > RESIDUE_TOL).map_or(0, |k| k + 1)
        })
    }

    pub fn max_pole_order(&self) -> usize {
        self.poles.iter().map(|p| self.pole_order(p.at)).max().unwrap_or(0)
    }

    /// Simple-pole coefficients.
    pub fn residues(&self) -> Vec<(C64, T)> {
        self.poles
            .iter()
            .map(|p| (p.at, p.coeffs.first().cloned().unwrap_or_else(|| T::from_c(ZERO))))
            .collect()
    }

    /// Largest coefficient magnitude in the canonical representation.
    pub fn max_coeff(&self) -> f64 {
        self.poly
            .iter()
            .chain(self.poles.iter().flat_map(|p| p.coeffs.iter()))
            .map(|c| c.magnitude())
            .fold(0.0, f64::max)
    }

    fn slot(&mut self, at: C64) -> Result<usize> {
        for (i, p) in self.poles.iter().enumerate() {
            if p.at == at {
                return Ok(i);
            }
            if (p.at - at).norm() < POLE_FLOOR {
                return Err(Error::Degeneracy { a: p.at, b: at });
            }
        }
        self.poles.push(Pole { at, coeffs: vec![] });
        Ok(self.poles.len() - 1)
    }

    fn push_pole(&mut self, at: C64, k: usize, c: T) -> Result<()> {
        let i = self.slot(at)?;
        push_at(&mut self.poles[i].coeffs, k - 1, c);
        Ok(())
    }

    /// Adds `c (x - a)^e` for `e >= 0` in monomial form.
    fn push_shifted_monomial(&mut self, a: C64, e: usize, c: &T) {
        for r in 0..=e {
            let w = (-a).powu((e - r) as u32) * binom(e, r);
            push_at(&mut self.poly, r, c.scale(w));
        }
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        let mut out = self.clone();
        for (n, c) in o.poly.iter().enumerate() {
            push_at(&mut out.poly, n, c.clone());
        }
        for p in &o.poles {
            let i = out.slot(p.at)?;
            for (k, c) in p.coeffs.iter().enumerate() {
                push_at(&mut out.poles[i].coeffs, k, c.clone());
            }
        }
        Ok(out.canonical())
    }

    pub fn neg(&self) -> Self {
        self.map(|c| -c.clone())
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.add(&o.neg())
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|c| c.scale(s))
    }

    pub fn map<U: Coef, F: Fn(&T) -> U>(&self, f: F) -> RationalFunction<U> {
        RationalFunction {
            poly: self.poly.iter().map(&f).collect(),
            poles: self.poles.iter().map(|p| Pole { at: p.at, coeffs: p.coeffs.iter().map(&f).collect() }).collect(),
        }
        .canonical()
    }

    /// The `delta^0` projection.
    pub fn value(&self) -> RationalFunction<C64> {
        self.map(|c| c.value())
    }

    pub fn mul(&self, o: &Self) -> Result<Self> {
        let mut out = Self::zero();
        for p in self.poles.iter().chain(&o.poles) {
            out.slot(p.at)?;
        }
        for (n, a) in self.poly.iter().enumerate() {
            for (m, b) in o.poly.iter().enumerate() {
                push_at(&mut out.poly, n + m, a.clone() * b.clone());
            }
        }
        out.mul_poly_poles(&self.poly, &o.poles)?;
        out.mul_poly_poles(&o.poly, &self.poles)?;
        for p in &self.poles {
            for q in &o.poles {
                for (k1, c) in p.coeffs.iter().enumerate() {
                    for (l1, d) in q.coeffs.iter().enumerate() {
                        let (k, l) = (k1 + 1, l1 + 1);
                        let cd = c.clone() * d.clone();
                        if cd.is_zero() {
                            continue;
                        }
                        if p.at == q.at {
                            out.push_pole(p.at, k + l, cd)?;
                            continue;
                        }
                        let (a, b) = (p.at, q.at);
                        for r in 0..k {
                            let w = (a - b).powi(-((l + r) as i32)) * (if r % 2 == 0 { 1.0 } else { -1.0 } * binom(l + r - 1, r));
                            out.push_pole(a, k - r, cd.scale(w))?;
                        }
                        for r in 0..l {
                            let w = (b - a).powi(-((k + r) as i32)) * (if r % 2 == 0 { 1.0 } else { -1.0 } * binom(k + r - 1, r));
                            out.push_pole(b, l - r, cd.scale(w))?;
                        }
                    }
                }
            }
        }
        Ok(out.canonical())
    }

    fn mul_poly_poles(&mut self, poly: &[T], poles: &[Pole<T>]) -> Result<()> {
        if poly.is_empty() {
            return Ok(());
        }
        for p in poles {
            let a = p.at;
            // poly in powers of (x - a)
            let q: Vec<T> = (0..poly.len())
                .map(|m| {
                    (m..poly.len()).fold(T::from_c(ZERO), |acc, n| acc + poly[n].scale(a.powu((n - m) as u32) * binom(n, m)))
                })
                .collect();
            for (m, qm) in q.iter().enumerate() {
                for (k1, c) in p.coeffs.iter().enumerate() {
                    let k = k1 + 1;
                    let t = qm.clone() * c.clone();
                    if m < k {
                        self.push_pole(a, k - m, t)?;
                    } else {
                        self.push_shifted_monomial(a, m - k, &t);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn diff(&self) -> Self {
        let poly = self.poly.iter().enumerate().skip(1).map(|(n, c)| c.scale(C64::new(n as f64, 0.0))).collect();
        let poles = self
            .poles
            .iter()
            .map(|p| {
                let mut coeffs = vec![T::from_c(ZERO)];
                coeffs.extend(p.coeffs.iter().enumerate().map(|(k1, c)| c.scale(C64::new(-((k1 + 1) as f64), 0.0))));
                Pole { at: p.at, coeffs }
            })
            .collect();
        Self { poly, poles }.canonical()
    }

    pub fn diff_n(&self, n: usize) -> Self {
        (0..n).fold(self.clone(), |f, _| f.diff())
    }

    /// Antiderivative with zero constant term, plus the dropped simple-pole
    /// coefficients.
    pub fn antiderivative_lenient(&self) -> (Self, Vec<(C64, T)>) {
        let mut poly = vec![T::from_c(ZERO)];
        poly.extend(self.poly.iter().enumerate().map(|(n, c)| c.scale(C64::new(1.0 / (n + 1) as f64, 0.0))));
        let mut dropped = vec![];
        let poles = self
            .poles
            .iter()
            .map(|p| {
                if let Some(r) = p.coeffs.first() {
                    dropped.push((p.at, r.clone()));
                }
                let coeffs = p.coeffs.iter().enumerate().skip(1).map(|(k1, c)| c.scale(C64::new(-1.0 / k1 as f64, 0.0))).collect();
                Pole { at: p.at, coeffs }
            })
            .collect();
        (Self { poly, poles }.canonical(), dropped)
    }

    /// Antiderivative; fails with the per-pole residues if any exceeds the tolerance.
    pub fn antiderivative(&self) -> Result<Self> {
        let (f, res) = self.antiderivative_lenient();
        if res.iter().any(|(_, r)| r.value().norm() > RESIDUE_TOL) {
            return Err(Error::Obstruction { residues: res.into_iter().map(|(a, r)| (a, r.value())).collect() });
        }
        Ok(f)
    }
}

impl RationalFunction<C64> {
    pub fn eval(&self, x: C64) -> C64 {
        let p = self.poly.iter().rev().fold(ZERO, |acc, c| acc * x + c);
        self.poles.iter().fold(p, |acc, pole| {
            let inv = ONE / (x - pole.at);
            acc + pole.coeffs.iter().rev().fold(ZERO, |s, c| (s + c) * inv)
        })
    }

    /// Laurent coefficients `c_0, c_1, ...` of the part regular at `at`.
    pub fn regular_taylor(&self, at: C64, n: usize) -> Vec<C64> {
        let mut out = vec![ZERO; n];
        for (m, slot) in out.iter_mut().enumerate() {
            // polynomial part
            for (j, c) in self.poly.iter().enumerate().skip(m) {
                *slot += c * at.powu((j - m) as u32) * binom(j, m);
            }
            for p in self.poles.iter().filter(|p| p.at != at) {
                let d = at - p.at;
                for (k1, c) in p.coeffs.iter().enumerate() {
                    let k = (k1 + 1) as i32;
                    *slot += c * gen_binom(-k, m) * d.powi(-k - m as i32);
                }
            }
        }
        out
    }
}

impl RationalFunction<YJet> {
    pub fn dy(&self) -> Self {
        self.map(|c| c.dy())
    }
}

impl<T: Coef> fmt::Display for RationalFunction<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "poly")?;
        for c in &self.poly {
            let v = c.value();
            write!(f, " ({:.17e},{:.17e})", v.re, v.im)?;
        }
        for p in &self.poles {
            write!(f, "; pole ({:.17e},{:.17e}):", p.at.re, p.at.im)?;
            for c in &p.coeffs {
                let v = c.value();
                write!(f, " ({:.17e},{:.17e})", v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// `sum_j a_j d^j` for `order - depth <= j <= order`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiDO<T> {
    pub order: i32,
    pub depth: usize,
    /// `coeffs[i]` multiplies `d^{order - i}`
    pub coeffs: Vec<RationalFunction<T>>,
}

impl<T: Coef> PsiDO<T> {
    pub fn zero(order: i32, depth: usize) -> Self {
        Self { order, depth, coeffs: vec![RationalFunction::zero(); depth + 1] }
    }

    pub fn identity(depth: usize) -> Self {
        Self::monomial(0, depth, RationalFunction::constant(T::from_c(ONE)))
    }

    /// `f d^j` with the window ending `depth` below `j`.
    pub fn monomial(j: i32, depth: usize, f: RationalFunction<T>) -> Self {
        let mut p = Self::zero(j, depth);
        p.coeffs[0] = f;
        p
    }

    pub fn bottom(&self) -> i32 {
        self.order - self.depth as i32
    }

    pub fn coeff(&self, j: i32) -> Result<&RationalFunction<T>> {
        if j < self.bottom() {
            return Err(Error::Truncation { needed: j, bottom: self.bottom() });
        }
        static_zero_or(self.coeffs.get((self.order - j) as usize))
    }

    pub fn set(&mut self, j: i32, f: RationalFunction<T>) -> Result<()> {
        if j < self.bottom() || j > self.order {
            return Err(Error::Truncation { needed: j, bottom: self.bottom() });
        }
        self.coeffs[(self.order - j) as usize] = f;
        Ok(())
    }

    fn terms(&self) -> impl Iterator<Item = (i32, &RationalFunction<T>)> {
        self.coeffs.iter().enumerate().map(move |(i, f)| (self.order - i as i32, f))
    }

    /// Same operator viewed in a shallower window.
    pub fn truncated(&self, depth: usize) -> Self {
        let depth = depth.min(self.depth);
        Self { order: self.order, depth, coeffs: self.coeffs[..=depth].to_vec() }
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        let order = self.order.max(o.order);
        let bottom = self.bottom().max(o.bottom());
        let mut out = Self::zero(order, (order - bottom) as usize);
        for (j, f) in self.terms().chain(o.terms()) {
            if j >= bottom {
                let cur = out.coeff(j)?.add(f)?;
                out.set(j, cur)?;
            }
        }
        Ok(out)
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.add(&o.scale(-ONE))
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { order: self.order, depth: self.depth, coeffs: self.coeffs.iter().map(|f| f.scale(s)).collect() }
    }

    pub fn map<U: Coef, F: Fn(&RationalFunction<T>) -> RationalFunction<U>>(&self, f: F) -> PsiDO<U> {
        PsiDO { order: self.order, depth: self.depth, coeffs: self.coeffs.iter().map(f).collect() }
    }

    /// Composition, using `d^i f = sum_k C(i, k) f^(k) d^{i-k}`.
    pub fn mul(&self, o: &Self) -> Result<Self> {
        let order = self.order + o.order;
        let depth = self.depth.min(o.depth);
        let bottom = order - depth as i32;
        let mut out = Self::zero(order, depth);
        // derivatives of the right factor's coefficients
        let derivs: Vec<Vec<RationalFunction<T>>> = o
            .coeffs
            .iter()
            .map(|f| {
                let mut v = vec![f.clone()];
                for _ in 0..depth {
                    let next = v.last().expect("nonempty").diff();
                    v.push(next);
                }
                v
            })
            .collect();
        for (i, a) in self.terms() {
            if a.is_zero() {
                continue;
            }
            for (jj, (j, _)) in o.terms().enumerate() {
                let mut k = 0usize;
                while i + j - k as i32 >= bottom {
                    let b = &derivs[jj][k];
                    if !b.is_zero() {
                        let c = gen_binom(i, k);
                        if c != 0.0 {
                            let e = i + j - k as i32;
                            let t = a.mul(b)?.scale(C64::new(c, 0.0));
                            let cur = out.coeff(e)?.add(&t)?;
                            out.set(e, cur)?;
                        }
                    }
                    k += 1;
                }
            }
        }
        Ok(out)
    }

    /// `sum_j (-d)^j a_j`.
    pub fn adjoint(&self) -> Result<Self> {
        let mut out = Self::zero(self.order, self.depth);
        let bottom = self.bottom();
        for (j, a) in self.terms() {
            let sign = if j.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            let mut d = a.clone();
            let mut k = 0usize;
            while j - k as i32 >= bottom {
                let c = sign * gen_binom(j, k);
                if c != 0.0 && !d.is_zero() {
                    let e = j - k as i32;
                    let cur = out.coeff(e)?.add(&d.scale(C64::new(c, 0.0)))?;
                    out.set(e, cur)?;
                }
                d = d.diff();
                k += 1;
            }
        }
        Ok(out)
    }

    /// Inverse for a constant leading coefficient, by a Neumann series.
    pub fn inverse(&self) -> Result<Self> {
        let lead = &self.coeffs[0];
        if !lead.poles.is_empty() || lead.poly.len() != 1 {
            return Err(Error::Domain("inverse needs a nonzero constant leading coefficient".into()));
        }
        let c = lead.poly[0].value();
        let n = self.order;
        let depth = self.depth;
        let dinv = Self::monomial(-n, depth, RationalFunction::constant(T::from_c(ONE / c)));
        // A = c d^n (1 + R)
        let rest = {
            let mut r = self.clone();
            r.coeffs[0] = RationalFunction::zero();
            r
        };
        let r = dinv.mul(&rest)?;
        let mut term = Self::identity(depth);
        let mut sum = Self::identity(depth);
        for _ in 0..depth {
            term = term.mul(&r)?.scale(-ONE);
            sum = sum.add(&term)?;
        }
        let out = sum.mul(&Self::monomial(-n, depth, RationalFunction::constant(T::from_c(ONE))))?;
        Ok(out.scale(ONE / c).reorder(-n, depth))
    }

    /// Re-expresses in a window with the given top exponent.
    fn reorder(&self, order: i32, depth: usize) -> Self {
        let mut out = Self::zero(order, depth);
        for (j, f) in self.terms() {
            let _ = out.set(j, f.clone());
        }
        out
    }

    pub fn power(&self, m: i32) -> Result<Self> {
        if m < 0 {
            return self.inverse()?.power(-m);
        }
        let mut out = Self::identity(self.depth);
        for _ in 0..m {
            out = out.mul(self)?;
        }
        Ok(out)
    }

    /// Differential part, exponents `>= 0`.
    pub fn plus_part(&self) -> Self {
        let mut out = self.clone();
        for (i, f) in out.coeffs.iter_mut().enumerate() {
            if self.order - (i as i32) < 0 {
                *f = RationalFunction::zero();
            }
        }
        out
    }

    /// Coefficient of `d^{-1}`.
    pub fn res(&self) -> Result<RationalFunction<T>> {
        if self.order < -1 {
            return Ok(RationalFunction::zero());
        }
        self.coeff(-1).cloned()
    }

    pub fn max_coeff(&self) -> f64 {
        self.coeffs.iter().map(|f| f.max_coeff()).fold(0.0, f64::max)
    }

    pub fn dump(&self) -> String {
        let mut s = format!("psido order {} depth {}\n", self.order, self.depth);
        for (j, f) in self.terms() {
            let _ = writeln!(s, "d^{j}: {f}");
        }
        s
    }
}

impl PsiDO<YJet> {
    pub fn dy(&self) -> Self {
        self.map(|f| f.dy())
    }

    pub fn value(&self) -> PsiDO<C64> {
        self.map(|f| f.value())
    }
}

fn static_zero_or<T: Coef>(f: Option<&RationalFunction<T>>) -> Result<&RationalFunction<T>> {
    f.ok_or(Error::Truncation { needed: 0, bottom: 0 })
}

/// How `y`-derivatives of positions are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum ForceRule {
    /// `x_i'' = cm_rhs`
    Cm,
    /// `x_i'' = cm_rhs + offset_i`, a state off the Calogero–Moser flow
    Perturbed(Vec<C64>),
}

fn rational_state(state: &CmState) -> Result<()> {
    if state.kind != CmKind::Rational {
        return Err(Error::Domain("wave series are implemented for the rational kernel".into()));
    }
    cm_rhs(state).map(|_| ())
}

/// Taylor jets of `x_i(y0 + delta)` through `order`, by the Taylor method.
pub fn position_jets(state: &CmState, rule: &ForceRule, order: usize) -> Result<Vec<YJet>> {
    rational_state(state)?;
    let n = state.len();
    let offsets = match rule {
        ForceRule::Cm => vec![ZERO; n],
        ForceRule::Perturbed(o) if o.len() == n => o.clone(),
        ForceRule::Perturbed(o) => return Err(Error::Dimension { expected: n, got: o.len() }),
    };
    let len = order + 1;
    let mut xs: Vec<Vec<C64>> = (0..n)
        .map(|i| {
            let mut v = vec![ZERO; len];
            v[0] = state.x[i];
            if len > 1 {
                v[1] = state.p[i];
            }
            v
        })
        .collect();
    for m in 0..len.saturating_sub(2) {
        let jets: Vec<YJet> = xs.iter().map(|v| YJet::new(v[..=m].to_vec())).collect();
        for i in 0..n {
            let mut f = YJet::new(vec![offsets[i]]);
            f.valid = m + 1;
            for j in (0..n).filter(|&j| j != i) {
                let d = (jets[i].clone() - jets[j].clone()).recip();
                f = f + (d.clone() * d.clone() * d).scale(C64::new(-8.0, 0.0));
            }
            xs[i][m + 2] = f.component(m) / ((m + 1) * (m + 2)) as f64;
        }
    }
    Ok(xs.into_iter().map(YJet::new).collect())
}

/// `u = sum 2 / (x - x_i)^2`.
pub fn cm_u(state: &CmState) -> Result<RationalFunction<C64>> {
    rational_state(state)?;
    let mut u = RationalFunction::zero();
    for &x in &state.x {
        u = u.add(&RationalFunction::pole_term(x, 2, C64::new(2.0, 0.0)))?;
    }
    Ok(u)
}

/// `u` with poles moving along the position jets.
pub fn cm_u_jet(jets: &[YJet]) -> Result<RationalFunction<YJet>> {
    let mut u = RationalFunction::zero();
    for x in jets {
        let a = x.value();
        let delta = x.clone() - YJet::exact(a);
        let order = x.valid();
        let mut pow = YJet::exact(ONE);
        for m in 0..order {
            u = u.add(&RationalFunction::pole_term(a, 2 + m, pow.scale(C64::new(2.0 * (m + 1) as f64, 0.0))))?;
            pow = pow * delta.clone();
        }
    }
    Ok(u)
}

/// Right side `d_y xi + u xi - xi''` of the recursion.
pub fn wave_rhs(xi: &RationalFunction<YJet>, u: &RationalFunction<YJet>) -> Result<RationalFunction<YJet>> {
    xi.dy().add(&u.mul(xi)?)?.sub(&xi.diff_n(2))
}

/// `xi_{s+1}` from `xi_s`: `2 xi'_{s+1} = d_y xi_s + u xi_s - xi_s''`.
pub fn wave_step(xi: &RationalFunction<YJet>, u: &RationalFunction<YJet>) -> Result<RationalFunction<YJet>> {
    Ok(wave_rhs(xi, u)?.antiderivative()?.scale(C64::new(0.5, 0.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveSeries {
    /// `xi_1 .. xi_S`
    pub xi: Vec<RationalFunction<YJet>>,
    pub b_shift: C64,
    pub state: CmState,
    pub u: RationalFunction<YJet>,
}

/// Per-step record of the residue obstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// the equation for `xi_{s+1}`
    pub step: usize,
    /// `(pole, residue)` at `y0`
    pub residues: Vec<(C64, C64)>,
    /// largest residue at `y0`
    pub max: f64,
    /// `max` over the largest right-hand-side coefficient (at least 1)
    pub relative: f64,
}

/// Runs steps `0..steps`, dropping residues and recording them.
pub fn wave_recursion_lenient(state: &CmState, steps: usize, rule: &ForceRule) -> Result<(WaveSeries, Vec<StepRecord>)> {
    let jets = position_jets(state, rule, steps + 1)?;
    let u = cm_u_jet(&jets)?;
    let mut xi = vec![];
    let mut cur = RationalFunction::constant(YJet::exact(ONE));
    let mut records = vec![];
    for s in 0..steps {
        let rhs = wave_rhs(&cur, &u)?;
        let scale = rhs.value().max_coeff().max(1.0);
        let (next, dropped) = rhs.antiderivative_lenient();
        let max = dropped.iter().map(|(_, r)| r.value().norm()).fold(0.0, f64::max);
        records.push(StepRecord { step: s, residues: dropped.iter().map(|(a, r)| (*a, r.value())).collect(), max, relative: max / scale });
        cur = next.scale(C64::new(0.5, 0.0));
        xi.push(cur.clone());
    }
    Ok((WaveSeries { xi, b_shift: ZERO, state: state.clone(), u }, records))
}

/// Runs steps `0..steps`; fails at the first obstruction.
pub fn wave_recursion(state: &CmState, steps: usize, rule: &ForceRule) -> Result<WaveSeries> {
    let (ws, records) = wave_recursion_lenient(state, steps, rule)?;
    if let Some(r) = first_obstruction(&records) {
        return Err(Error::Obstruction { residues: r.residues.clone() });
    }
    Ok(ws)
}

/// First step whose obstruction exceeds the tolerance.
pub fn first_obstruction(records: &[StepRecord]) -> Option<&StepRecord> {
    records.iter().find(|r| r.relative > RESIDUE_TOL)
}

/// `rdot_s + v_i r_s + 2 r_{s1}` from Laurent data of `xi_s` and `u` at each pole.
pub fn predicted_obstruction(xi: &RationalFunction<YJet>, u: &RationalFunction<YJet>) -> Vec<(C64, C64)> {
    let u0 = u.value();
    let x0 = xi.value();
    u0.pole_locations()
        .into_iter()
        .map(|a| {
            let (r, rdot) = xi
                .poles
                .iter()
                .find(|p| p.at == a)
                .and_then(|p| p.coeffs.first())
                .map_or((ZERO, ZERO), |c| (c.component(0), c.component(1)));
            let v = u0.regular_taylor(a, 1)[0];
            let r1 = x0.regular_taylor(a, 2)[1];
            (a, rdot + v * r + r1 * 2.0)
        })
        .collect()
}

impl WaveSeries {
    pub fn steps(&self) -> usize {
        self.xi.len()
    }

    pub fn dump(&self) -> String {
        let mut s = String::from("wave_series\n");
        let _ = writeln!(s, "b_shift ({:.17e},{:.17e})", self.b_shift.re, self.b_shift.im);
        for (x, p) in self.state.x.iter().zip(&self.state.p) {
            let _ = writeln!(s, "particle x ({:.17e},{:.17e}) p ({:.17e},{:.17e})", x.re, x.im, p.re, p.im);
        }
        for (k, f) in self.xi.iter().enumerate() {
            let _ = writeln!(s, "xi_{}: {}", k + 1, f);
        }
        s
    }
}

/// `Phi = 1 + sum xi_s d^{-s}`.
pub fn wave_operator(ws: &WaveSeries) -> PsiDO<YJet> {
    let depth = ws.steps();
    let mut phi = PsiDO::identity(depth);
    for (k, f) in ws.xi.iter().enumerate() {
        phi.coeffs[k + 1] = f.clone();
    }
    phi
}

/// `L = Phi d Phi^{-1}`.
pub fn lax_operator<T: Coef>(phi: &PsiDO<T>) -> Result<PsiDO<T>> {
    let d = PsiDO::monomial(1, phi.depth, RationalFunction::constant(T::from_c(ONE)));
    phi.mul(&d)?.mul(&phi.inverse()?)
}

/// `F_m = res L^m` for `m = 1..=m_max`.
pub fn f_residues<T: Coef>(l: &PsiDO<T>, m_max: usize) -> Result<Vec<RationalFunction<T>>> {
    if (l.depth as i32) < m_max as i32 + 1 {
        return Err(Error::Truncation { needed: -1, bottom: m_max as i32 - l.depth as i32 });
    }
    let mut out = vec![];
    let mut p = l.clone();
    for m in 1..=m_max {
        if m > 1 {
            p = p.mul(l)?;
        }
        out.push(p.res()?);
    }
    Ok(out)
}

/// Coefficients of `k^{-s}` in `(e^{-kx} A)(B e^{kx})`, for `s = 0..=depth`
/// (left action of `A`).
pub fn pairing_series(a: &PsiDO<C64>, b: &PsiDO<C64>) -> Result<Vec<RationalFunction<C64>>> {
    let adj = a.adjoint()?;
    let top = adj.order + b.order;
    let bottom = (adj.bottom() + b.order).max(adj.order + b.bottom());
    let mut out = vec![];
    for e in (bottom..=top).rev() {
        let mut acc = RationalFunction::zero();
        for (i, f) in adj.terms() {
            let j = e - i;
            if j > b.order || j < b.bottom() {
                continue;
            }
            let sign = if i.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            acc = acc.add(&f.mul(b.coeff(j)?)?.scale(C64::new(sign, 0.0)))?;
        }
        out.push((e, acc));
    }
    Ok(out.into_iter().filter(|(e, _)| *e <= 0).map(|(_, f)| f).collect())
}

/// `res_k` of the pairing: the `k^{-1}` coefficient.
pub fn pairing_res(a: &PsiDO<C64>, b: &PsiDO<C64>) -> Result<RationalFunction<C64>> {
    let adj = a.adjoint()?;
    let mut acc = RationalFunction::zero();
    for (i, f) in adj.terms() {
        let j = -1 - i;
        if j > b.order {
            continue;
        }
        if j < b.bottom() {
            return Err(Error::Truncation { needed: j, bottom: b.bottom() });
        }
        let sign = if i.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        acc = acc.add(&f.mul(b.coeff(j)?)?.scale(C64::new(sign, 0.0)))?;
    }
    Ok(acc)
}

/// `psi+ psi = 1 + sum J_s k^{-s}` with `psi+ = e^{-kx} Phi^{-1}`; entry `s` is `J_s`.
pub fn dual_pairing(ws: &WaveSeries) -> Result<Vec<RationalFunction<C64>>> {
    let phi = wave_operator(ws).value();
    pairing_series(&phi.inverse()?, &phi)
}

/// Max coefficient of `[d_y - d^2 + u, (L^m)_+] - 2 F_m'`.
pub fn lax_commutator_check(ws: &WaveSeries, m: usize) -> Result<f64> {
    if m == 0 || m > 4 {
        return Err(Error::Domain("m must be in 1..=4".into()));
    }
    let phi = wave_operator(ws);
    let depth = phi.depth;
    if depth < m + 1 {
        return Err(Error::Truncation { needed: -1, bottom: m as i32 - depth as i32 });
    }
    let l = lax_operator(&phi)?;
    let lm = l.power(m as i32)?;
    let f = lm.res()?.value();
    let mp = lm.plus_part();
    let heat = PsiDO::monomial(2, depth, RationalFunction::constant(YJet::exact(-ONE))).add(&PsiDO::monomial(0, depth, ws.u.clone()))?;
    let comm = heat.mul(&mp)?.sub(&mp.mul(&heat)?)?;
    let lhs = comm.add(&mp.dy())?.value();
    let rhs = f.diff().scale(C64::new(2.0, 0.0));
    let mut worst: f64 = 0.0;
    for (j, c) in lhs.terms() {
        if j < 0 {
            continue;
        }
        let d = if j == 0 { c.sub(&rhs)? } else { c.clone() };
        worst = worst.max(d.max_coeff());
    }
    Ok(worst)
}
