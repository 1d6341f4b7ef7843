use crate::error::{CliError, CliResult};
use crate::manifest::*;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schottky_core::cm::{cm_hamiltonian, find_zeros, integrate, residue_condition, residue_condition_within, track_zeros, ProductTau, ThetaTau, TrackOptions};
use schottky_core::curve::{flex_data, kp_vectors, period_json, CurvePoint};
use schottky_core::detect::{divisor_eq_residual, dubrovin_residual, flex_residual, kp_residual, sample_divisor, search_uv, Grid, SearchOptions};
use schottky_core::theta::{theta_deriv, theta_general, Characteristic, DerivativeSpec};
use schottky_core::waves::{
    dual_pairing, f_residues, lax_commutator_check, lax_operator, pairing_res, wave_operator, wave_recursion, wave_recursion_lenient, ForceRule, PsiDO,
    RationalFunction,
};
use schottky_core::{CmState, ResidualReport, RiemannMatrix, Truncation};
use serde_json::json;
use std::f64::consts::PI;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// A named quantity that must not exceed its limit.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    fn new(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit }
    }

    pub fn pass(&self) -> bool {
        self.value <= self.limit
    }
}

#[derive(Debug, Default)]
pub struct Output {
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

impl Output {
    fn file(&mut self, name: &str, content: String) {
        self.files.push((name.into(), content));
    }

    fn check(&mut self, name: &str, value: f64, limit: f64) {
        self.checks.push(Check::new(name, value, limit));
    }

    fn report(&mut self, rep: &ResidualReport, limit: f64) {
        self.file("report.json", rep.to_json());
        self.file("per_point.csv", rep.per_point_csv());
        self.check(&rep.criterion, rep.max, limit);
    }
}

pub struct Ctx {
    pub seed: Option<u64>,
    pub trunc: Truncation,
}

impl Ctx {
    fn seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| CliError::Usage("this command is stochastic: give --seed or a seed key in the manifest".into()))
    }
}

fn pretty(v: serde_json::Value) -> String {
    serde_json::to_string_pretty(&v).expect("json value serializes") + "\n"
}

fn max_of(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, f64::max)
}

fn points(z: &[Vec<C>], b: &RiemannMatrix) -> CliResult<Vec<Vec<Complex64>>> {
    if z.is_empty() {
        return Err(CliError::Usage("at least one evaluation point is needed".into()));
    }
    let pts: Vec<Vec<Complex64>> = z.iter().map(|p| cv(p)).collect();
    if let Some(p) = pts.iter().find(|p| p.len() != b.genus()) {
        return Err(CliError::Usage(format!("point of length {} for genus {}", p.len(), b.genus())));
    }
    Ok(pts)
}

pub fn theta_eval(m: &ThetaEval, ctx: &Ctx) -> CliResult<Output> {
    let b = m.surface.resolve()?.b;
    let mut out = Output::default();
    let mut rows = vec![];
    let mut worst = 0.0f64;
    for z in points(&m.z, &b)? {
        let ch = Characteristic::zero(b.genus());
        let none = DerivativeSpec::none();
        let base = theta_general(&z, &b, &ch, &none, &ctx.trunc)?;
        for j in 0..b.genus() {
            let shifted: Vec<Complex64> = (0..b.genus()).map(|k| z[k] + b.entries()[(k, j)]).collect();
            let factor = (-I * PI * b.entries()[(j, j)] - I * 2.0 * PI * z[j]).exp();
            let moved = theta_general(&shifted, &b, &ch, &none, &ctx.trunc)?;
            worst = worst.max((moved.value - factor * base.value).norm() / (factor.norm() * base.abs_sum));
        }
        rows.push(json!({ "z": z, "value": base.value, "abs_sum": base.abs_sum }));
    }
    out.file("theta_eval.json", pretty(json!({ "tol": ctx.trunc.tol, "points": rows })));
    out.check("quasi_periodicity", worst, m.check.quasi_periodicity);
    Ok(out)
}

pub fn theta_deriv_cmd(m: &ThetaDeriv, ctx: &Ctx) -> CliResult<Output> {
    let b = m.surface.resolve()?.b;
    let dirs: Vec<Vec<Complex64>> = m.dirs.iter().map(|d| cv(d)).collect();
    let (last, lower) = dirs.split_last().ok_or_else(|| CliError::Usage("dirs must list at least one direction".into()))?;
    let spec = DerivativeSpec::new(dirs.clone())?;
    let lower = DerivativeSpec::new(lower.to_vec())?;
    let mut out = Output::default();
    let mut rows = vec![];
    let mut worst = 0.0f64;
    for z in points(&m.z, &b)? {
        let value = theta_deriv(&z, &b, &spec, &ctx.trunc)?;
        let along = |h: f64| -> CliResult<Complex64> {
            let zp: Vec<Complex64> = z.iter().zip(last).map(|(a, d)| a + d * h).collect();
            let zm: Vec<Complex64> = z.iter().zip(last).map(|(a, d)| a - d * h).collect();
            Ok((theta_deriv(&zp, &b, &lower, &ctx.trunc)? - theta_deriv(&zm, &b, &lower, &ctx.trunc)?) / (2.0 * h))
        };
        let (d1, d2) = (along(2e-3)?, along(1e-3)?);
        let fd = (d2 * 4.0 - d1) / 3.0;
        worst = worst.max((fd - value).norm() / value.norm().max(1.0));
        rows.push(json!({ "z": z, "value": value }));
    }
    out.file("theta_deriv.json", pretty(json!({ "tol": ctx.trunc.tol, "order": dirs.len(), "points": rows })));
    out.check("finite_difference", worst, m.check.finite_difference);
    Ok(out)
}

pub fn theta_char(m: &ThetaChar, ctx: &Ctx) -> CliResult<Output> {
    let b = m.surface.resolve()?.b;
    let ch = Characteristic::new(m.eps.clone(), m.delta.clone())?;
    let dot: f64 = m.eps.iter().zip(&m.delta).map(|(e, d)| e * d).sum();
    let sign = if (4.0 * dot).round() as i64 % 2 == 0 { 1.0 } else { -1.0 };
    let none = DerivativeSpec::none();
    let mut out = Output::default();
    let mut rows = vec![];
    let mut worst = 0.0f64;
    for z in points(&m.z, &b)? {
        let plus = theta_general(&z, &b, &ch, &none, &ctx.trunc)?;
        let neg: Vec<Complex64> = z.iter().map(|c| -c).collect();
        let minus = theta_general(&neg, &b, &ch, &none, &ctx.trunc)?;
        worst = worst.max((minus.value - plus.value * sign).norm() / plus.abs_sum.max(minus.abs_sum));
        rows.push(json!({ "z": z, "value": plus.value }));
    }
    out.file("theta_char.json", pretty(json!({ "tol": ctx.trunc.tol, "eps": m.eps, "delta": m.delta, "parity": sign, "points": rows })));
    out.check("parity", worst, m.check.parity);
    Ok(out)
}

pub fn curve_periods(m: &CurvePeriods, _ctx: &Ctx) -> CliResult<Output> {
    let pd = m.surface.periods()?;
    let raw = &pd.b_periods * &pd.normalizer;
    let scale = raw.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let asym = (&raw - raw.transpose()).iter().map(|c| c.norm()).fold(0.0, f64::max) / scale;
    let mut out = Output::default();
    out.file("periods.json", period_json(&pd, None));
    out.check("symmetry", asym, m.check.symmetry);
    out.check("quadrature", pd.quad_estimate, m.check.quadrature);
    Ok(out)
}

pub fn curve_vectors(m: &CurveVectors, ctx: &Ctx) -> CliResult<Output> {
    let r = m.surface.resolve()?;
    let pd = r.periods.as_ref().ok_or_else(|| CliError::Usage("curve vectors needs surface.branch_points".into()))?;
    let vecs = r.vectors()?;
    let rep = kp_residual(&r.b, vecs, &Grid::cube(m.grid, m.half), &ctx.trunc)?;
    let mut out = Output::default();
    out.file("vectors.json", period_json(pd, Some(vecs)));
    out.report(&rep, m.check.kp);
    Ok(out)
}

pub fn curve_flex(m: &CurveFlex, ctx: &Ctx) -> CliResult<Output> {
    let pd = m.surface.periods()?;
    let fd = flex_data(&pd, &CurvePoint::from_x(cx(&m.point), m.surface.upper)?, &cv(&m.waypoints))?;
    let mut vecs = kp_vectors(&pd)?;
    vecs.flex = Some(fd.clone());
    let rep = flex_residual(&pd.b, &vecs, &ctx.trunc)?;
    let mut out = Output::default();
    out.file("flex.json", pretty(json!({ "point": cx(&m.point), "abel": fd.a, "p": fd.p, "e": fd.e })));
    out.report(&rep, m.check.flex);
    Ok(out)
}

pub fn cm_simulate(m: &CmSimulate, _ctx: &Ctx) -> CliResult<Output> {
    let s = m.particles.state()?;
    let tr = integrate(&s, cx(&m.y_end), m.ode_tol)?;
    let h0 = cm_hamiltonian(&s)?;
    let mut drift = 0.0f64;
    for smp in &tr.samples {
        let h = cm_hamiltonian(&CmState { y: smp.y, x: smp.x.clone(), p: smp.p.clone(), kind: s.kind })?;
        drift = drift.max((h - h0).norm() / h0.norm().max(1.0));
    }
    let mut out = Output::default();
    out.file("trajectory.csv", tr.to_csv()?);
    out.check("energy_drift", drift, m.check.energy_drift);
    Ok(out)
}

pub fn cm_track(m: &CmTrack, ctx: &Ctx) -> CliResult<Output> {
    let r = m.surface.resolve()?;
    let vecs = r.vectors()?;
    let tau = ThetaTau { b: r.b.clone(), u: vecs.u.clone(), v: vecs.v.clone(), z: cv(&m.z), trunc: ctx.trunc };
    let origin = Complex64::new(0.0, 0.0);
    let window = (m.window[0], m.window[1]);
    let found = find_zeros(&tau, origin, origin, window, m.grid)?;
    if found.len() < m.zeros {
        return Err(CliError::Threshold(format!("criterion `zeros`: found {} zeros in the window, need {}", found.len(), m.zeros)));
    }
    let opts = TrackOptions { samples: m.samples, ..TrackOptions::default() };
    let tr = track_zeros(&tau, origin, cx(&m.y_end), &found[..m.zeros], &opts)?;
    let wide = (3.0 * window.0, 3.0 * window.1);
    let (mut res, mut mis) = (0.0f64, 0.0f64);
    let mut csv = String::from("re_y,im_y");
    for i in 0..m.zeros {
        csv += &format!(",re_x{i},im_x{i}");
    }
    csv.push('\n');
    for s in &tr.samples {
        let mut all = find_zeros(&tau, s.y, origin, wide, m.grid)?;
        for x in &s.x {
            if all.iter().all(|z| (z - x).norm() > 1e-7) {
                all.push(*x);
            }
        }
        for e in residue_condition_within(&tau, s.y, &all, 1e-10, 0.1)? {
            if s.x.iter().any(|x| (x - e.x).norm() < 1e-7) {
                res = res.max(e.residue.norm());
                mis = mis.max(e.mismatch.norm());
            }
        }
        csv += &format!("{:.17e},{:.17e}", s.y.re, s.y.im);
        for x in &s.x {
            csv += &format!(",{:.17e},{:.17e}", x.re, x.im);
        }
        csv.push('\n');
    }
    let mut out = Output::default();
    out.file("zeros.csv", csv);
    out.check("residue", res, m.check.residue);
    out.check("mismatch", mis, m.check.mismatch);
    Ok(out)
}

pub fn cm_residue(m: &CmResidue, _ctx: &Ctx) -> CliResult<Output> {
    let s = m.particles.state()?;
    let mut tau = ProductTau::new(integrate(&s, cx(&m.y_end), 1e-12)?);
    if let Some(k) = &m.kick {
        if k.particle >= s.len() {
            return Err(CliError::Usage(format!("kick particle {} out of range", k.particle)));
        }
        tau.kick = Some((k.particle, cx(&k.dp), s.y));
    }
    let y = cx(&m.y_eval);
    let zeros = tau.zeros(y)?.0;
    let entries = residue_condition(&tau, y, &zeros, 1e-10)?;
    let rows: Vec<_> = entries
        .iter()
        .map(|e| json!({ "x": e.x, "residue": e.residue, "xddot": e.xddot, "w": e.w, "mismatch": e.mismatch }))
        .collect();
    let mut out = Output::default();
    out.file("residue.json", pretty(json!({ "y": y, "y_method": "trajectory", "entries": rows })));
    out.check("residue", max_of(entries.iter().map(|e| e.residue.norm())), m.check.residue);
    out.check("mismatch", max_of(entries.iter().map(|e| e.mismatch.norm())), m.check.mismatch);
    Ok(out)
}

pub fn waves_recurse(m: &WavesRecurse, _ctx: &Ctx) -> CliResult<Output> {
    let s = m.particles.state()?;
    let rule = match &m.offsets {
        Some(o) => ForceRule::Perturbed(cv(o)),
        None => ForceRule::Cm,
    };
    let (ws, records) = wave_recursion_lenient(&s, m.steps, &rule)?;
    let rows: Vec<_> = records
        .iter()
        .map(|r| json!({ "step": r.step, "max": r.max, "relative": r.relative, "residues": r.residues }))
        .collect();
    let mut out = Output::default();
    out.file("wave_series.txt", ws.dump());
    out.file("obstruction.json", pretty(json!({ "steps": rows })));
    out.check("obstruction", max_of(records.iter().map(|r| r.relative)), m.check.obstruction);
    Ok(out)
}

fn random_op(rng: &mut ChaCha8Rng, order: i32, depth: usize, poles: &[Complex64]) -> CliResult<PsiDO<Complex64>> {
    let mut p = PsiDO::zero(order, depth);
    let unit = |rng: &mut ChaCha8Rng| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    for f in p.coeffs.iter_mut() {
        let terms = rng.gen_range(1..3);
        let mut r = RationalFunction::from_poly((0..terms).map(|_| unit(rng)).collect());
        for &a in poles {
            let k = rng.gen_range(1..3);
            r = r.add(&RationalFunction::pole_term(a, k, unit(rng)))?;
        }
        *f = r;
    }
    Ok(p)
}

pub fn psido_check(m: &PsidoCheck, ctx: &Ctx) -> CliResult<Output> {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed()?);
    let (mut assoc, mut dickey) = (0.0f64, 0.0f64);
    for _ in 0..m.pairs {
        let poles = [Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)), Complex64::new(rng.gen_range(2.0..3.0), rng.gen_range(-1.0..1.0))];
        let orders: Vec<i32> = (0..3).map(|_| rng.gen_range(-1..3)).collect();
        let a = random_op(&mut rng, orders[0], m.depth, &poles)?;
        let b = random_op(&mut rng, orders[1], m.depth, &poles)?;
        let c = random_op(&mut rng, orders[2], m.depth, &poles)?;
        let left = a.mul(&b)?.mul(&c)?;
        let right = a.mul(&b.mul(&c)?)?;
        assoc = assoc.max(left.sub(&right)?.max_coeff() / left.max_coeff().max(1.0));
        let rhs = b.mul(&a)?.res()?;
        dickey = dickey.max(pairing_res(&a, &b)?.sub(&rhs)?.max_coeff() / rhs.max_coeff().max(1.0));
    }
    let s = m.particles.state()?;
    let ws = wave_recursion(&s, 7, &ForceRule::Cm)?;
    let l = lax_operator(&wave_operator(&ws).value())?;
    let f = f_residues(&l, 4)?;
    let j = dual_pairing(&ws)?;
    let mut jf = 0.0f64;
    let mut order = 0;
    let mut dump = String::new();
    for (k, fm) in f.iter().enumerate() {
        jf = jf.max(j[k + 2].sub(fm)?.max_coeff());
        order = order.max(fm.max_pole_order());
        dump += &format!("F_{}: {fm}\n", k + 1);
    }
    let lax = max_of((1..=2).map(|m| lax_commutator_check(&ws, m)).collect::<Result<Vec<_>, _>>()?);
    let mut out = Output::default();
    out.file("lax_operator.txt", l.dump());
    out.file("f_residues.txt", dump);
    out.check("associativity", assoc, m.check.associativity);
    out.check("dickey", dickey, m.check.dickey);
    out.check("dual_pairing", jf, m.check.dual_pairing);
    out.check("lax", lax, m.check.lax);
    out.check("pole_order", order as f64, m.check.pole_order as f64);
    Ok(out)
}

pub fn schottky_kp(m: &SchottkyKp, ctx: &Ctx) -> CliResult<Output> {
    let r = m.surface.resolve()?;
    let rep = kp_residual(&r.b, r.vectors()?, &Grid::cube(m.grid, m.half), &ctx.trunc)?;
    let mut out = Output::default();
    out.report(&rep, m.check.residual);
    Ok(out)
}

pub fn schottky_dubrovin(m: &SchottkyPlain, ctx: &Ctx) -> CliResult<Output> {
    let r = m.surface.resolve()?;
    let (c, mut rep) = dubrovin_residual(&r.b, r.vectors()?, &ctx.trunc)?;
    rep.notes.push(format!("fitted constant ({:.17e}, {:.17e})", c.re, c.im));
    let mut out = Output::default();
    out.report(&rep, m.check.residual);
    Ok(out)
}

pub fn schottky_divisor(m: &SchottkyDivisor, ctx: &Ctx) -> CliResult<Output> {
    let seed = ctx.seed()?;
    let r = m.surface.resolve()?;
    let vecs = r.vectors()?;
    let sample = sample_divisor(&r.b, &vecs.u, m.points, seed, &ctx.trunc)?;
    let rep = divisor_eq_residual(&r.b, &vecs.u, &vecs.v, &sample, &ctx.trunc)?;
    let mut out = Output::default();
    out.report(&rep, m.check.residual);
    Ok(out)
}

pub fn schottky_flex(m: &SchottkyPlain, ctx: &Ctx) -> CliResult<Output> {
    let r = m.surface.resolve()?;
    let rep = flex_residual(&r.b, r.vectors()?, &ctx.trunc)?;
    let mut out = Output::default();
    out.report(&rep, m.check.residual);
    Ok(out)
}

pub fn schottky_search(m: &SchottkySearch, ctx: &Ctx) -> CliResult<Output> {
    let d = SearchOptions::default();
    let t = &m.search;
    let opts = SearchOptions {
        multistarts: t.multistarts.unwrap_or(d.multistarts),
        budget: t.budget.unwrap_or(d.budget),
        seed: ctx.seed()?,
        divisor_points: t.divisor_points.unwrap_or(d.divisor_points),
        polish_iters: t.polish_iters.unwrap_or(d.polish_iters),
        threshold: t.threshold.unwrap_or(d.threshold),
    };
    let b = m.surface.resolve()?.b;
    let res = search_uv(&b, &opts, &ctx.trunc)?;
    let mut out = Output::default();
    out.file("search.json", pretty(json!({ "u": res.u, "v": res.v, "converged": res.converged, "options": opts })));
    out.report(&res.report, m.check.residual);
    Ok(out)
}
