use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schottky_core::cm::{integrate, residue_condition, CmState, ProductTau};
use schottky_core::curve::{flex_data, hyperelliptic_periods, kp_vectors, CurvePoint, HyperellipticCurve, KPVectors, DEFAULT_QUAD_ORDER, REFERENCE_CURVE};
use schottky_core::detect::{divisor_eq_residual, dubrovin_residual, flex_residual, kp_residual, sample_divisor, Grid};
use schottky_core::theta::{theta, theta_deriv, DerivativeSpec};
use schottky_core::waves::{f_residues, lax_operator, wave_operator, wave_recursion, ForceRule, PsiDO, RationalFunction, YJet};
use schottky_core::{RiemannMatrix, Truncation};
use std::f64::consts::PI;
use std::sync::OnceLock;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_b(g: usize, rng: &mut ChaCha8Rng) -> RiemannMatrix {
    let m = DMatrix::<f64>::from_fn(g, g, |_, _| rng.gen_range(-0.4..0.4));
    let y = m.transpose() * &m + DMatrix::<f64>::identity(g, g) * 0.6;
    let mut x = DMatrix::<f64>::from_fn(g, g, |_, _| rng.gen_range(-0.5..0.5));
    x = (&x + x.transpose()) * 0.5;
    RiemannMatrix::new(DMatrix::from_fn(g, g, |i, j| c(x[(i, j)], y[(i, j)]))).unwrap()
}

fn random_z(g: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    (0..g).map(|_| c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.3..0.3))).collect()
}

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn theta_quasi_periodicity(seed in any::<u64>(), g in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_b(g, &mut rng);
        let z = random_z(g, &mut rng);
        let t = Truncation::default();
        let base = theta(&z, &b, &t).unwrap();
        for j in 0..g {
            let shifted: Vec<Complex64> = (0..g).map(|k| z[k] + b.entries()[(k, j)]).collect();
            let factor = (-I * PI * b.entries()[(j, j)] - I * 2.0 * PI * z[j]).exp();
            prop_assert!(rel(theta(&shifted, &b, &t).unwrap(), factor * base) < 1e-10);
            let mut unit = z.clone();
            unit[j] += 1.0;
            prop_assert!(rel(theta(&unit, &b, &t).unwrap(), base) < 1e-12);
        }
    }

    #[test]
    fn truncation_certificate(seed in any::<u64>(), g in 1usize..=3, k in 4i32..=11) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_b(g, &mut rng);
        let z = random_z(g, &mut rng);
        let tol = 10f64.powi(-k);
        let coarse = theta(&z, &b, &Truncation::with_tol(tol)).unwrap();
        let fine = theta(&z, &b, &Truncation::with_tol(tol / 2.0)).unwrap();
        prop_assert!((coarse - fine).norm() <= tol);
    }

    #[test]
    fn genus_one_heat_equation(re in -0.4f64..0.4, im in 0.7f64..1.5, zr in -0.5f64..0.5, zi in -0.3f64..0.3) {
        let t = Truncation::default();
        let th = |z: Complex64, tau: Complex64| theta(&[z], &RiemannMatrix::from_rows(&[vec![tau]]).unwrap(), &t).unwrap();
        let (z, tau) = (c(zr, zi), c(re, im));
        let spec = DerivativeSpec::repeated(&[c(1.0, 0.0)], 2).unwrap();
        let zz = theta_deriv(&[z], &RiemannMatrix::from_rows(&[vec![tau]]).unwrap(), &spec, &t).unwrap();
        let d_tau = |h: f64| (th(z, tau + h) - th(z, tau - h)) / (2.0 * h);
        let (d1, d2, d3) = (d_tau(2e-3), d_tau(1e-3), d_tau(5e-4));
        let (e1, e2) = ((d2 * 4.0 - d1) / 3.0, (d3 * 4.0 - d2) / 3.0);
        let bb = (e2 * 16.0 - e1) / 15.0;
        prop_assert!(rel(zz, bb * 4.0 * PI * I) < 1e-8);
    }
}

struct Reference {
    b: RiemannMatrix,
    vecs: KPVectors,
}

fn reference() -> &'static Reference {
    static R: OnceLock<Reference> = OnceLock::new();
    R.get_or_init(|| {
        let pd = hyperelliptic_periods(&HyperellipticCurve::real(&REFERENCE_CURVE).unwrap(), DEFAULT_QUAD_ORDER).unwrap();
        let mut vecs = kp_vectors(&pd).unwrap();
        vecs.flex = Some(flex_data(&pd, &CurvePoint::from_x(c(0.5, 0.7), true).unwrap(), &[]).unwrap());
        Reference { b: pd.b, vecs }
    })
}

fn gauged(v: &KPVectors, lambda: Complex64, shift: Complex64) -> KPVectors {
    let u: Vec<Complex64> = v.u.iter().map(|a| a * lambda).collect();
    let vv: Vec<Complex64> = v.v.iter().zip(&u).map(|(a, b)| a * lambda * lambda + b * shift).collect();
    let w = v.w.iter().map(|a| a * lambda.powi(3)).collect();
    let mut out = KPVectors::new(u, vv, w, v.z.clone());
    out.flex = v.flex.clone().map(|mut f| {
        f.p *= lambda;
        f.e *= lambda * lambda;
        f
    });
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn reports_are_gauge_invariant(lr in 0.5f64..2.0, li in -0.5f64..0.5, sr in -1.0f64..1.0, si in -1.0f64..1.0) {
        let r = reference();
        let t = Truncation::default();
        let lambda = c(lr, li);
        let scaled = gauged(&r.vecs, lambda, c(0.0, 0.0));
        let shifted = gauged(&r.vecs, c(1.0, 0.0), c(sr, si));
        let grid = Grid::cube(3, 0.4);
        let base = kp_residual(&r.b, &r.vecs, &grid, &t).unwrap().max;
        let pulled = Grid {
            x: grid.x.iter().map(|x| x / lambda).collect(),
            y: grid.y.iter().map(|y| y / (lambda * lambda)).collect(),
            t: grid.t.iter().map(|t| t / lambda.powi(3)).collect(),
        };
        prop_assert!((kp_residual(&r.b, &scaled, &pulled, &t).unwrap().max - base).abs() < 1e-10);
        let base = dubrovin_residual(&r.b, &r.vecs, &t).unwrap().1.max;
        prop_assert!((dubrovin_residual(&r.b, &scaled, &t).unwrap().1.max - base).abs() < 1e-10);
        let sample = sample_divisor(&r.b, &r.vecs.u, 12, 5, &t).unwrap();
        let base = divisor_eq_residual(&r.b, &r.vecs.u, &r.vecs.v, &sample, &t).unwrap().max;
        for g in [&scaled, &shifted] {
            prop_assert!((divisor_eq_residual(&r.b, &g.u, &g.v, &sample, &t).unwrap().max - base).abs() < 1e-10);
        }
        let base = flex_residual(&r.b, &r.vecs, &t).unwrap().max;
        prop_assert!((flex_residual(&r.b, &scaled, &t).unwrap().max - base).abs() < 1e-10);
    }
}

fn random_state(n: usize, rng: &mut ChaCha8Rng) -> CmState {
    loop {
        let x: Vec<Complex64> = (0..n).map(|_| c(rng.gen_range(-1.5..1.5), rng.gen_range(-0.5..0.5))).collect();
        if (0..n).all(|i| (0..i).all(|j| (x[i] - x[j]).norm() > 0.5)) {
            let p = (0..n).map(|_| c(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3))).collect();
            return CmState::rational(x, p).unwrap();
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn residue_tracks_equations_of_motion(seed in any::<u64>(), n in 2usize..=4, kicked in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(n, &mut rng);
        let mut tau = ProductTau::new(integrate(&s, c(0.3, 0.0), 1e-12).unwrap());
        if kicked {
            tau.kick = Some((rng.gen_range(0..n), c(0.05, 0.02), c(0.0, 0.0)));
        }
        let y = c(0.2, 0.0);
        let zeros = tau.zeros(y).unwrap().0;
        let entries = residue_condition(&tau, y, &zeros, 1e-10).unwrap();
        let (mut res, mut mis) = (0.0f64, 0.0f64);
        for e in &entries {
            prop_assert!((e.residue + e.mismatch).norm() < 1e-8);
            res = res.max(e.residue.norm());
            mis = mis.max(e.mismatch.norm());
        }
        prop_assert_eq!(res <= 1e-8, mis <= 1e-8);
        prop_assert_eq!(res <= 1e-8, !kicked);
    }

    #[test]
    fn translation_covariance(seed in any::<u64>(), n in 2usize..=4, sr in -3.0f64..3.0, si in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(n, &mut rng);
        let shift = c(sr, si);
        let moved = CmState::rational(s.x.iter().map(|x| x + shift).collect(), s.p.clone()).unwrap();
        let a = integrate(&s, c(0.5, 0.0), 1e-11).unwrap();
        let b = integrate(&moved, c(0.5, 0.0), 1e-11).unwrap();
        for k in 0..=10 {
            let y = c(0.05 * k as f64, 0.0);
            let (pa, pb) = (a.at(y).unwrap(), b.at(y).unwrap());
            for i in 0..n {
                prop_assert!((pa.x[i] + shift - pb.x[i]).norm() < 1e-9);
            }
        }
    }
}

fn random_op(rng: &mut ChaCha8Rng, order: i32, depth: usize, poles: &[Complex64]) -> PsiDO<Complex64> {
    let mut p = PsiDO::zero(order, depth);
    for f in p.coeffs.iter_mut() {
        let mut r = RationalFunction::from_poly((0..rng.gen_range(1..3)).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect());
        for &a in poles {
            r = r.add(&RationalFunction::pole_term(a, rng.gen_range(1..3), c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))).unwrap();
        }
        *f = r;
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn psido_associativity(seed in any::<u64>(), oa in -1i32..=2, ob in -1i32..=2, oc in -1i32..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poles = [c(0.3, 0.1), c(-0.7, 0.4)];
        let (a, b, cc) = (random_op(&mut rng, oa, 5, &poles), random_op(&mut rng, ob, 5, &poles), random_op(&mut rng, oc, 5, &poles));
        let left = a.mul(&b).unwrap().mul(&cc).unwrap();
        let right = a.mul(&b.mul(&cc).unwrap()).unwrap();
        let scale = left.max_coeff().max(1.0);
        prop_assert!(left.sub(&right).unwrap().max_coeff() < 1e-12 * scale);
    }

    #[test]
    fn lax_residues_have_double_poles_and_ignore_constant_gauge(seed in any::<u64>(), n in 1usize..=3, gr in -1.0f64..1.0, gi in -1.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(n, &mut rng);
        let ws = wave_recursion(&s, 6, &ForceRule::Cm).unwrap();
        let phi = wave_operator(&ws);
        let f = f_residues(&lax_operator(&phi).unwrap(), 4).unwrap();
        for fm in &f {
            prop_assert!(fm.value().max_pole_order() <= 2);
        }
        let depth = phi.depth;
        let g = PsiDO::identity(depth).add(&PsiDO::monomial(-1, depth, RationalFunction::constant(YJet::exact(c(gr, gi))))).unwrap();
        let f2 = f_residues(&lax_operator(&phi.mul(&g).unwrap()).unwrap(), 4).unwrap();
        for (a, b) in f.iter().zip(&f2) {
            let scale = a.value().max_coeff().max(1.0);
            prop_assert!(a.value().sub(&b.value()).unwrap().max_coeff() < 1e-10 * scale);
        }
    }
}
