//! TOML run manifests. Complex numbers are written `[re, im]`; every table
//! rejects keys it does not know.

use crate::error::{CliError, CliResult};
use num_complex::Complex64;
use schottky_core::curve::{
    flex_data, genus1_data, hyperelliptic_periods, kp_vectors, kp_vectors_at, CurvePoint, HyperellipticCurve, KPVectors, PeriodData,
    DEFAULT_QUAD_ORDER,
};
use schottky_core::{CmKind, CmState, Lattice, RiemannMatrix};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use std::path::Path;

pub type C = [f64; 2];

pub fn cx(c: &C) -> Complex64 {
    Complex64::new(c[0], c[1])
}

pub fn cv(v: &[C]) -> Vec<Complex64> {
    v.iter().map(cx).collect()
}

/// Reads and parses a manifest; an empty one is a usage error.
pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<(T, String)> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    let table: toml::Table = toml::from_str(&text)?;
    if table.is_empty() {
        return Err(CliError::Usage(format!("manifest {} is empty", path.display())));
    }
    Ok((toml::from_str(&text)?, text))
}

/// Where the period matrix and directions come from: branch points of a
/// hyperelliptic curve, a genus-one `tau`, or explicit data.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Surface {
    pub branch_points: Option<Vec<f64>>,
    pub quad_order: Option<usize>,
    pub tau: Option<C>,
    pub b: Option<Vec<Vec<C>>>,
    pub u: Option<Vec<C>>,
    pub v: Option<Vec<C>>,
    pub w: Option<Vec<C>>,
    /// puncture `x` for the KP directions; the point at infinity when absent
    pub puncture: Option<C>,
    /// curve point for flex data
    pub flex_point: Option<C>,
    #[serde(default = "yes")]
    pub upper: bool,
}

fn yes() -> bool {
    true
}

pub struct Resolved {
    pub b: RiemannMatrix,
    pub vecs: Option<KPVectors>,
    pub periods: Option<PeriodData>,
}

impl Surface {
    pub fn periods(&self) -> CliResult<PeriodData> {
        let pts = self.branch_points.as_ref().ok_or_else(|| CliError::Usage("surface.branch_points is required here".into()))?;
        Ok(hyperelliptic_periods(&HyperellipticCurve::real(pts)?, self.quad_order.unwrap_or(DEFAULT_QUAD_ORDER))?)
    }

    pub fn resolve(&self) -> CliResult<Resolved> {
        let sources = [self.branch_points.is_some(), self.tau.is_some(), self.b.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(CliError::Usage("surface needs exactly one of branch_points, tau, b".into()));
        }
        if self.branch_points.is_some() {
            let pd = self.periods()?;
            let mut vecs = match self.puncture {
                Some(x) => kp_vectors_at(&pd, cx(&x), self.upper)?,
                None => kp_vectors(&pd)?,
            };
            if let Some(x) = self.flex_point {
                vecs.flex = Some(flex_data(&pd, &CurvePoint::from_x(cx(&x), self.upper)?, &[])?);
            }
            return Ok(Resolved { b: pd.b.clone(), vecs: Some(vecs), periods: Some(pd) });
        }
        if let Some(t) = self.tau {
            let (b, vecs) = genus1_data(cx(&t))?;
            return Ok(Resolved { b, vecs: Some(vecs), periods: None });
        }
        let rows: Vec<Vec<Complex64>> = self.b.as_ref().map(|r| r.iter().map(|row| cv(row)).collect()).unwrap_or_default();
        let b = RiemannMatrix::from_rows(&rows)?;
        let vecs = match (&self.u, &self.v, &self.w) {
            (Some(u), Some(v), w) => {
                let g = b.genus();
                let w = w.as_ref().map(|w| cv(w)).unwrap_or_else(|| vec![Complex64::new(0.0, 0.0); g]);
                Some(KPVectors::new(cv(u), cv(v), w, vec![Complex64::new(0.0, 0.0); g]))
            }
            (None, None, None) => None,
            _ => return Err(CliError::Usage("surface.u and surface.v go together".into())),
        };
        Ok(Resolved { b, vecs, periods: None })
    }
}

impl Resolved {
    pub fn vectors(&self) -> CliResult<&KPVectors> {
        self.vecs.as_ref().ok_or_else(|| CliError::Usage("this command needs directions: give branch_points, tau, or u and v".into()))
    }
}

/// Initial data of a particle system.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Particles {
    #[serde(default = "rational")]
    pub kind: String,
    /// the two generators `2 omega_1, 2 omega_2` for the elliptic kernel
    pub periods: Option<[C; 2]>,
    pub x: Vec<C>,
    pub p: Vec<C>,
    #[serde(default)]
    pub y0: C,
}

fn rational() -> String {
    "rational".into()
}

impl Particles {
    pub fn state(&self) -> CliResult<CmState> {
        let kind = match (self.kind.as_str(), &self.periods) {
            ("rational", _) => CmKind::Rational,
            ("trigonometric", _) => CmKind::Trigonometric,
            ("elliptic", Some([a, b])) => CmKind::Elliptic(Lattice::new(cx(a), cx(b))?),
            ("elliptic", None) => return Err(CliError::Usage("elliptic particles need periods".into())),
            (k, _) => return Err(CliError::Usage(format!("unknown particle kind {k:?}"))),
        };
        Ok(CmState::new(cx(&self.y0), cv(&self.x), cv(&self.p), kind)?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaEval {
    pub seed: Option<u64>,
    pub surface: Surface,
    pub z: Vec<Vec<C>>,
    pub check: ThetaEvalCheck,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaEvalCheck {
    pub quasi_periodicity: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaDeriv {
    pub seed: Option<u64>,
    pub surface: Surface,
    pub z: Vec<Vec<C>>,
    pub dirs: Vec<Vec<C>>,
    pub check: ThetaDerivCheck,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaDerivCheck {
    pub finite_difference: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaChar {
    pub seed: Option<u64>,
    pub surface: Surface,
    pub z: Vec<Vec<C>>,
    pub eps: Vec<f64>,
    pub delta: Vec<f64>,
    pub check: ThetaCharCheck,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaCharCheck {
    pub parity: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvePeriods {
    pub seed: Option<u64>,
    pub surface: Surface,
    pub check: CurvePeriodsCheck,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvePeriodsCheck {
    pub symmetry: f64,
    pub quadrature: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveVectors {
    pub seed: Option<u64>,
    pub surface: Surface,
    #[serde(default = "three")]
    pub grid: usize,
    #[serde(default = "half")]
    pub half: f64,
    pub check: KpCheck,
}

fn three() -> usize {
    3
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpCheck {
    pub kp: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveFlex {
    pub seed: Option<u64>,
    pub surface: Surface,
    pub point: C,
    #[serde(default)]
    pub waypoints: Vec<C>,
    pub check: FlexCheck,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlexCheck {
    pub flex: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmSimulate {
    pub seed: Option<u64>,
    pub particles: Particles,
    pub y_end: C,
    #[serde(default = "ode_tol")]
    pub ode_tol: f64,
    pub check: CmSimulateCheck,
}

fn ode_tol() -> f64 {
    1e-12
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmSimulateCheck {
    pub energy_drift: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmTrack {
    pub seed: Option<u64>,
    pub surface: Surface,
    /// base point `Z` of the theta function
    pub z: Vec<C>,
    pub y_end: C,
    /// half-widths of the search rectangle around the origin
    pub window: [f64; 2],
    #[serde(default = "ten")]
    pub grid: usize,
    pub zeros: usize,
    #[serde(default = "twenty")]
    pub samples: usize,
    pub check: CmTrackCheck,
}

fn ten() -> usize {
    10
}

fn twenty() -> usize {
    20
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmTrackCheck {
    pub residue: f64,
    pub mismatch: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmResidue {
    pub seed: Option<u64>,
    pub particles: Particles,
    pub y_end: C,
    pub y_eval: C,
    pub kick: Option<Kick>,
    pub check: CmResidueCheck,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kick {
    pub particle: usize,
    pub dp: C,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmResidueCheck {
    pub residue: f64,
    pub mismatch: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavesRecurse {
    pub seed: Option<u64>,
    pub particles: Particles,
    pub steps: usize,
    /// added to the accelerations, moving the state off the flow
    pub offsets: Option<Vec<C>>,
    pub check: WavesRecurseCheck,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavesRecurseCheck {
    pub obstruction: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsidoCheck {
    pub seed: Option<u64>,
    pub particles: Particles,
    #[serde(default = "twenty")]
    pub pairs: usize,
    #[serde(default = "six")]
    pub depth: usize,
    pub check: PsidoCheckLimits,
}

fn six() -> usize {
    6
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsidoCheckLimits {
    pub associativity: f64,
    pub dickey: f64,
    pub dual_pairing: f64,
    pub lax: f64,
    pub pole_order: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchottkyKp {
    pub seed: Option<u64>,
    pub surface: Surface,
    #[serde(default = "three")]
    pub grid: usize,
    #[serde(default = "half")]
    pub half: f64,
    pub check: ResidualCheck,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualCheck {
    pub residual: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchottkyPlain {
    pub seed: Option<u64>,
    pub surface: Surface,
    pub check: ResidualCheck,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchottkyDivisor {
    pub seed: Option<u64>,
    pub surface: Surface,
    pub points: usize,
    pub check: ResidualCheck,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchottkySearch {
    pub seed: Option<u64>,
    pub surface: Surface,
    #[serde(default)]
    pub search: SearchTable,
    pub check: ResidualCheck,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchTable {
    pub multistarts: Option<usize>,
    pub budget: Option<usize>,
    pub divisor_points: Option<usize>,
    pub polish_iters: Option<usize>,
    pub threshold: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surface(text: &str) -> Surface {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn exactly_one_source() {
        assert!(surface("tau = [0.0, 1.0]").resolve().is_ok());
        assert!(matches!(surface("").resolve(), Err(CliError::Usage(_))));
        assert!(matches!(surface("tau = [0.0, 1.0]\nb = [[[0.0, 1.0]]]").resolve(), Err(CliError::Usage(_))));
    }

    #[test]
    fn explicit_matrix_needs_both_directions() {
        let r = surface("b = [[[0.0, 1.0]]]").resolve().unwrap();
        assert!(r.vecs.is_none());
        assert!(matches!(surface("b = [[[0.0, 1.0]]]\nu = [[1.0, 0.0]]").resolve(), Err(CliError::Usage(_))));
        let r = surface("b = [[[0.0, 1.0]]]\nu = [[1.0, 0.0]]\nv = [[0.0, 0.0]]").resolve().unwrap();
        assert_eq!(r.vectors().unwrap().w, vec![Complex64::new(0.0, 0.0)]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Surface>("taus = [0.0, 1.0]").is_err());
    }

    #[test]
    fn particle_kinds() {
        let p = |text: &str| toml::from_str::<Particles>(text).unwrap().state();
        let base = "x = [[0.0, 0.0], [1.0, 0.0]]\np = [[0.0, 0.0], [0.0, 0.0]]\n";
        assert!(matches!(p(base).unwrap().kind, CmKind::Rational));
        assert!(matches!(p(&format!("{base}kind = \"trigonometric\"")).unwrap().kind, CmKind::Trigonometric));
        assert!(matches!(p(&format!("{base}kind = \"elliptic\"")), Err(CliError::Usage(_))));
        let ell = format!("{base}kind = \"elliptic\"\nperiods = [[2.0, 0.0], [0.0, 2.0]]");
        assert!(matches!(p(&ell).unwrap().kind, CmKind::Elliptic(_)));
        assert!(matches!(p(&format!("{base}kind = \"hyperbolic\"")), Err(CliError::Usage(_))));
    }
}
