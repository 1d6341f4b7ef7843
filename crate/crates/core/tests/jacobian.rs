use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schottky_core::curve::{flex_data, hyperelliptic_periods, kp_vectors, kp_vectors_at, CurvePoint, HyperellipticCurve, REFERENCE_CURVE};
use schottky_core::detect::{divisor_eq_residual, dubrovin_residual, flex_residual, kp_residual, random_unit, sample_divisor, Grid};
use schottky_core::Truncation;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn genus_two_criteria_hold_on_the_jacobian() {
    let pd = hyperelliptic_periods(&HyperellipticCurve::real(&REFERENCE_CURVE).unwrap(), 200).unwrap();
    let t = Truncation::default();
    let v = kp_vectors(&pd).unwrap();
    let kp = kp_residual(&pd.b, &v, &Grid::cube(3, 0.5), &t).unwrap();
    let (_, dub) = dubrovin_residual(&pd.b, &v, &t).unwrap();
    let s = sample_divisor(&pd.b, &v.u, 20, 1, &t).unwrap();
    let de = divisor_eq_residual(&pd.b, &v.u, &v.v, &s, &t).unwrap();
    eprintln!("kp {:.2e} dub {:.2e} div {:.2e} ({} pts)", kp.max, dub.max, de.max, de.samples);
    assert!(kp.max < 1e-6 && dub.max < 1e-6 && de.max < 1e-6);

    let vf = kp_vectors_at(&pd, c(0.3, 0.5), true).unwrap();
    let kp = kp_residual(&pd.b, &vf, &Grid::cube(3, 0.5), &t).unwrap();
    let (_, dub) = dubrovin_residual(&pd.b, &vf, &t).unwrap();
    let de = divisor_eq_residual(&pd.b, &vf.u, &vf.v, &s, &t).unwrap();
    eprintln!("finite: kp {:.2e} dub {:.2e} div {:.2e}", kp.max, dub.max, de.max);
    assert!(kp.max < 1e-6 && dub.max < 1e-6 && de.max < 1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut r = v.clone();
    r.u = random_unit(2, &mut rng);
    r.v = random_unit(2, &mut rng);
    r.w = random_unit(2, &mut rng);
    let kp = kp_residual(&pd.b, &r, &Grid::cube(3, 0.5), &t).unwrap();
    let (_, dub) = dubrovin_residual(&pd.b, &r, &t).unwrap();
    let de = divisor_eq_residual(&pd.b, &r.u, &r.v, &s, &t).unwrap();
    eprintln!("random: kp {:.2e}/{:.2e} dub {:.2e}/{:.2e} div {:.2e}/{:.2e}", kp.mean, kp.max, dub.mean, dub.max, de.mean, de.max);

    let mut vf = v.clone();
    for x in [c(0.5, 0.7), c(-0.4, 1.2), c(2.0, 0.3)] {
        vf.flex = Some(flex_data(&pd, &CurvePoint::from_x(x, true).unwrap(), &[]).unwrap());
        let rep = flex_residual(&pd.b, &vf, &t).unwrap();
        eprintln!("flex {x}: {:.2e}", rep.max);
    }
}
