//! The homogenization operator `A(H) = H̄` with backend dispatch, partial
//! homogenization over frozen parameters, and a checker for the algebraic laws
//! of `A`.

mod effective;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use effective::*;

use crate::domain::{
    bump_in_p, sample_hamiltonian, shear_conjugate, Analytic, HamiltonianField, MomentumGrid, PeriodicFn, TorusGrid,
};
use crate::error::{Error, Result};
use crate::genfun::{build_fk, one_step_gf};
use crate::minmax::{hk_curve, MinmaxParams, DEFAULT_TAU};
use crate::weakkam::{alpha_curve, levelset_curve, AlphaParams, Levelset, LEVELSET_PANELS};

/// Largest `k` the min-max backend accepts.
pub const MAX_MINMAX_K: usize = 4;

/// Resolution of every backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogParams {
    /// Output nodes; defaults to the field's momentum grid.
    pub pgrid: Option<MomentumGrid>,
    pub k: usize,
    pub tau: f64,
    pub minmax: MinmaxParams,
    pub alpha: AlphaParams,
}

impl Default for HomogParams {
    fn default() -> Self {
        Self { pgrid: None, k: MAX_MINMAX_K, tau: DEFAULT_TAU, minmax: MinmaxParams::default(), alpha: AlphaParams::default() }
    }
}

fn invalid(backend: Backend, reason: impl Into<String>) -> Error {
    Error::BackendInvalid { backend: backend.to_string(), reason: reason.into() }
}

/// Samples `h̄` with the chosen backend. `p`-only input is returned unchanged by
/// every backend (the image of `A` is fixed pointwise).
pub fn homogenize(h: &HamiltonianField, backend: Backend, params: &HomogParams) -> Result<EffectiveHamiltonian> {
    let pgrid = params.pgrid.unwrap_or_else(|| h.pgrid());
    if h.is_p_only() {
        let values: Vec<f64> = if pgrid == h.pgrid() {
            h.row(0).to_vec()
        } else {
            pgrid.nodes().iter().map(|&p| h.value(0.0, p)).collect()
        };
        return EffectiveHamiltonian::new(h.name(), Backend::ExactPOnly, pgrid, values);
    }
    match backend {
        Backend::ExactPOnly => Err(invalid(backend, format!("'{}' depends on q", h.name()))),
        Backend::Weakkam => {
            if !h.is_convex_in_p() {
                return Err(invalid(backend, format!("'{}' is not convex in p; use minmax", h.name())));
            }
            alpha_curve(h, pgrid, &params.alpha)
        }
        Backend::Levelset => match levelset_curve(h, pgrid) {
            Err(Error::NotMechanical(name)) => {
                Err(invalid(backend, format!("'{name}' is not of the form p^2/2 - V(q); use weakkam or minmax")))
            }
            other => other,
        },
        Backend::Minmax => {
            if params.k == 0 || params.k > MAX_MINMAX_K {
                return Err(invalid(backend, format!("k = {} is outside 1..={MAX_MINMAX_K}", params.k)));
            }
            let f = build_fk(&one_step_gf(h, params.tau)?, params.k)?;
            hk_curve(&f, pgrid, &params.minmax)
        }
    }
}

/// `H(x, y, q, p)` with `(x, y)` fast and `(q, p)` frozen.
#[derive(Clone)]
pub struct FourVariableHamiltonian {
    pub name: String,
    f: Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for FourVariableHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourVariableHamiltonian").field("name", &self.name).finish()
    }
}

impl FourVariableHamiltonian {
    pub fn new(name: impl Into<String>, f: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }

    pub fn eval(&self, x: f64, y: f64, q: f64, p: f64) -> f64 {
        (self.f)(x, y, q, p)
    }

    /// The fast Hamiltonian at frozen `(q, p)`.
    pub fn slice(&self, q: f64, p: f64, xgrid: TorusGrid, ygrid: MomentumGrid) -> Result<HamiltonianField> {
        let f = self.f.clone();
        sample_hamiltonian(format!("{}@({q},{p})", self.name), Analytic::new(move |x, y| f(x, y, q, p)), xgrid, ygrid)
    }
}

/// `h̄(y, q, p)` on frozen nodes; `curves[iq * ps.len() + ip]` is the curve in `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialHomogenization {
    pub qs: Vec<f64>,
    pub ps: Vec<f64>,
    pub curves: Vec<EffectiveHamiltonian>,
}

impl PartialHomogenization {
    pub fn curve(&self, iq: usize, ip: usize) -> &EffectiveHamiltonian {
        &self.curves[iq * self.ps.len() + ip]
    }
}

/// Homogenizes in `(x, y)` separately for every frozen `(q, p)`.
pub fn partial_homogenize(
    h: &FourVariableHamiltonian,
    qs: &[f64],
    ps: &[f64],
    xgrid: TorusGrid,
    ygrid: MomentumGrid,
    backend: Backend,
    params: &HomogParams,
) -> Result<PartialHomogenization> {
    let nodes: Vec<(f64, f64)> = qs.iter().flat_map(|&q| ps.iter().map(move |&p| (q, p))).collect();
    let curves = nodes
        .par_iter()
        .map(|&(q, p)| {
            h.slice(q, p, xgrid, ygrid)
                .and_then(|field| homogenize(&field, backend, params))
                .map_err(|e| Error::Slice { q, p, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PartialHomogenization { qs: qs.to_vec(), ps: ps.to_vec(), curves })
}

/// Laws of the homogenization operator checked by [`check_properties`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Projector,
    Monotonicity,
    Invariance,
    AntiSymmetry,
    Lipschitz,
    Sandwich,
    QuasiLinearity,
}

impl Property {
    pub const ALL: [Property; 7] = [
        Property::Projector,
        Property::Monotonicity,
        Property::Invariance,
        Property::AntiSymmetry,
        Property::Lipschitz,
        Property::Sandwich,
        Property::QuasiLinearity,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Property::Projector => "projector",
            Property::Monotonicity => "monotonicity",
            Property::Invariance => "invariance",
            Property::AntiSymmetry => "anti_symmetry",
            Property::Lipschitz => "lipschitz",
            Property::Sandwich => "sandwich",
            Property::QuasiLinearity => "quasi_linearity",
        }
    }
}

impl std::str::FromStr for Property {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Property::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown property '{s}'")))
    }
}

/// One checked law: `pass` iff `slack <= budget` (for monotonicity, iff the margin `slack >= 0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub property: Property,
    pub inputs_hash: String,
    pub slack: f64,
    pub budget: f64,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub results: Vec<PropertyResult>,
}

impl PropertyReport {
    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn get(&self, p: Property) -> Vec<&PropertyResult> {
        self.results.iter().filter(|r| r.property == p).collect()
    }
}

/// Settings of the property checker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyConfig {
    pub suite: Vec<Property>,
    pub backend: Backend,
    /// Backend for the sandwich law; the level-set oracle when the input is mechanical.
    pub sandwich_backend: Option<Backend>,
    pub params: HomogParams,
    pub seed: u64,
    pub lipschitz_pairs: usize,
    pub sandwich_trials: usize,
    /// Budget multiplier applied to combined error estimates.
    pub budget_factor: f64,
}

impl Default for PropertyConfig {
    fn default() -> Self {
        Self {
            suite: Property::ALL.to_vec(),
            backend: Backend::Minmax,
            sandwich_backend: None,
            params: HomogParams::default(),
            seed: 7,
            lipschitz_pairs: 20,
            sandwich_trials: 10,
            budget_factor: 1.5,
        }
    }
}

fn hash_inputs(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn sup_gap(a: &EffectiveHamiltonian, b: &EffectiveHamiltonian, sign: f64) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| (x - sign * y).abs()).fold(0.0, f64::max)
}

/// Random `A cos(2 pi m q + phi) (1 + s sin(p + psi))`.
fn random_wave(rng: &mut ChaCha8Rng, amp: f64, p_weight: f64) -> Analytic {
    let a = rng.gen_range(-amp..amp);
    let m = rng.gen_range(1..=2) as f64;
    let (phi, psi) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    Analytic::new(move |q, p| a * (2.0 * PI * m * q + phi).cos() * (1.0 + p_weight * (p + psi).sin())).with_gradient(
        move |q, p| {
            let c = (2.0 * PI * m * q + phi).cos();
            let s = (2.0 * PI * m * q + phi).sin();
            (-2.0 * PI * m * a * s * (1.0 + p_weight * (p + psi).sin()), a * c * p_weight * (p + psi).cos())
        },
    )
}

struct Checker<'a> {
    h: &'a HamiltonianField,
    cfg: &'a PropertyConfig,
    params: HomogParams,
}

impl Checker<'_> {
    fn hom(&self, f: &HamiltonianField) -> Result<EffectiveHamiltonian> {
        homogenize(f, self.cfg.backend, &self.params)
    }

    fn field(&self, name: String, a: Analytic) -> Result<HamiltonianField> {
        sample_hamiltonian(name, a, self.h.qgrid(), self.h.pgrid())
    }

    fn result(&self, property: Property, inputs: &[&str], slack: f64, budget: f64, pass: bool, detail: String) -> PropertyResult {
        let mut parts = vec![property.as_str(), self.h.name(), self.cfg.backend.as_str()];
        parts.extend_from_slice(inputs);
        PropertyResult { property, inputs_hash: hash_inputs(&parts), slack, budget, pass, detail }
    }

    fn within(&self, property: Property, inputs: &[&str], gap: f64, estimates: f64, detail: String) -> PropertyResult {
        let budget = self.cfg.budget_factor * estimates;
        self.result(property, inputs, gap, budget, gap <= budget, detail)
    }

    fn projector(&self) -> Result<PropertyResult> {
        let a = self.hom(self.h)?;
        let aa = self.hom(&a.to_field(self.h.qgrid())?)?;
        let gap = sup_gap(&a, &aa, 1.0);
        Ok(self.result(Property::Projector, &[], gap, 0.0, gap == 0.0, format!("A(A(H)) via {}", aa.backend)))
    }

    fn monotonicity(&self, k: Option<&HamiltonianField>) -> Result<PropertyResult> {
        let k = match k {
            Some(k) => k.clone(),
            None => self.field(format!("{}+0.3bump", self.h.name()), self.h.as_analytic().sum(&bump_in_p(2.0).scaled(0.3)))?,
        };
        let below = self.h.values().iter().zip(k.values()).all(|(a, b)| a <= b);
        if !below {
            return Ok(self.result(Property::Monotonicity, &[k.name()], f64::NAN, 0.0, false, "H <= K fails on the grid".into()));
        }
        let (ah, ak) = (self.hom(self.h)?, self.hom(&k)?);
        let margin = ak.values.iter().zip(&ah.values).map(|(b, a)| b - a).fold(f64::INFINITY, f64::min);
        Ok(self.result(Property::Monotonicity, &[k.name()], margin, 0.0, margin >= 0.0, "min (A(K) - A(H))".into()))
    }

    fn invariance(&self, f: &PeriodicFn) -> Result<PropertyResult> {
        let sheared = shear_conjugate(self.h, f)?;
        let (a, b) = (self.hom(self.h)?, self.hom(&sheared)?);
        Ok(self.within(
            Property::Invariance,
            &[sheared.name()],
            sup_gap(&a, &b, 1.0),
            a.error_estimate + b.error_estimate,
            "sup |A(H o psi) - A(H)|".into(),
        ))
    }

    fn anti_symmetry(&self) -> Result<PropertyResult> {
        let neg = self.h.scaled(-1.0, format!("-{}", self.h.name()))?;
        let (a, b) = (self.hom(self.h)?, self.hom(&neg)?);
        Ok(self.within(
            Property::AntiSymmetry,
            &[neg.name()],
            sup_gap(&b, &a, -1.0),
            a.error_estimate + b.error_estimate,
            "sup |A(-H) + A(H)|".into(),
        ))
    }

    fn lipschitz(&self) -> Result<Vec<PropertyResult>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut out = Vec::new();
        for i in 0..self.cfg.lipschitz_pairs {
            let base = self.h.as_analytic().sum(&random_wave(&mut rng, 0.1, 0.5));
            let c = rng.gen_range(-0.1..0.1);
            let m = rng.gen_range(1..=2) as f64;
            let (phi, psi) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
            // sup over the plane of |c cos(2 pi m q + phi) cos(p + psi)| is exactly |c|.
            let delta = Analytic::new(move |q, p| c * (2.0 * PI * m * q + phi).cos() * (p + psi).cos()).with_gradient(
                move |q, p| {
                    (
                        -2.0 * PI * m * c * (2.0 * PI * m * q + phi).sin() * (p + psi).cos(),
                        -c * (2.0 * PI * m * q + phi).cos() * (p + psi).sin(),
                    )
                },
            );
            let h1 = self.field(format!("lip{i}a"), base.clone())?;
            let h2 = self.field(format!("lip{i}b"), base.sum(&delta))?;
            let (a1, a2) = (self.hom(&h1)?, self.hom(&h2)?);
            let gap = sup_gap(&a1, &a2, 1.0);
            let budget = c.abs() * (1.0 + 1e-9) + 1e-12;
            let tag = format!("{}:{i}", self.cfg.seed);
            out.push(self.result(Property::Lipschitz, &[&tag], gap, budget, gap <= budget, "sup |A(H1) - A(H2)| vs sup |H1 - H2|".into()));
        }
        Ok(out)
    }

    fn sandwich(&self, f: &PeriodicFn, p0: f64) -> Result<Vec<PropertyResult>> {
        let backend = self.cfg.sandwich_backend.unwrap_or_else(|| {
            if Levelset::new(self.h, 16).is_ok() {
                Backend::Levelset
            } else {
                self.cfg.backend
            }
        });
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x5a5a);
        let mut trials: Vec<(PeriodicFn, f64, String)> = vec![(f.clone(), p0, format!("given:{p0}"))];
        for i in 0..self.cfg.sandwich_trials {
            let a = rng.gen_range(-0.3..0.3);
            let m = rng.gen_range(1..=3u32);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let p = rng.gen_range(-1.5..1.5);
            trials.push((PeriodicFn::sine_mode(a, m, phase), p, format!("{}:{i}", self.cfg.seed)));
        }
        let curve = match backend {
            Backend::Levelset => None,
            b => Some(homogenize(self.h, b, &self.params)?),
        };
        let oracle = match backend {
            Backend::Levelset => Some(Levelset::new(self.h, LEVELSET_PANELS)?),
            _ => None,
        };
        let mut out = Vec::new();
        for (f, p, tag) in trials {
            let (value, estimate) = match (&oracle, &curve) {
                (Some(o), _) => (o.value(p), 1e-8),
                (None, Some(c)) => (c.value(p), c.error_estimate),
                _ => unreachable!("one of the two evaluators is set"),
            };
            let n = 1024;
            let on_l: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).map(|q| self.h.value(q, p + f.deriv(q))).collect();
            let lo = on_l.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = on_l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let excess = (lo - value).max(value - hi).max(0.0);
            let budget = self.cfg.budget_factor * estimate;
            out.push(self.result(
                Property::Sandwich,
                &[&tag, backend.as_str()],
                excess,
                budget,
                excess <= budget,
                format!("min_L H = {lo:.6} <= h({p:.4}) = {value:.6} <= max_L H = {hi:.6}"),
            ));
        }
        Ok(out)
    }

    fn quasi_linearity(&self) -> Result<Vec<PropertyResult>> {
        let half = self.h.scaled(0.5, format!("{}/2", self.h.name()))?;
        let sum = self.h.scaled(1.5, format!("3{}/2", self.h.name()))?;
        let (a, b, c) = (self.hom(self.h)?, self.hom(&half)?, self.hom(&sum)?);
        let gap = c.values.iter().zip(a.values.iter().zip(&b.values)).map(|(s, (x, y))| (s - x - y).abs()).fold(0.0, f64::max);
        let first = self.within(
            Property::QuasiLinearity,
            &["H", "H/2"],
            gap,
            a.error_estimate + b.error_estimate + c.error_estimate,
            "sup |A(H + H/2) - A(H) - A(H/2)|".into(),
        );
        let (qg, pg) = (self.h.qgrid(), self.h.pgrid());
        let u = sample_hamiltonian("p_only_u", crate::domain::p_only_wave(0.1), qg, pg)?;
        let v = sample_hamiltonian("p_only_v", bump_in_p(1.0), qg, pg)?;
        let w = u.plus(&v, "p_only_u+v")?;
        let (au, av, aw) = (self.hom(&u)?, self.hom(&v)?, self.hom(&w)?);
        let gap = aw.values.iter().zip(au.values.iter().zip(&av.values)).map(|(s, (x, y))| (s - (x + y)).abs()).fold(0.0, f64::max);
        let second = self.result(Property::QuasiLinearity, &["p_only_u", "p_only_v"], gap, 0.0, gap == 0.0, "p-only pair, exact".into());
        Ok(vec![first, second])
    }
}

/// Checks the selected laws of `A` on `h`. `k` is the upper comparison field for
/// monotonicity (default `h + 0.3 bump(p/2)`), `f` the generating function of
/// the shear and of the sandwich Lagrangian (default `0.05 sin(2 pi q)/(2 pi)`),
/// and `p0` the sandwich momentum. Failures to evaluate a law are reported as failed entries.
pub fn check_properties(
    h: &HamiltonianField,
    k: Option<&HamiltonianField>,
    f: Option<&PeriodicFn>,
    p0: f64,
    cfg: &PropertyConfig,
) -> PropertyReport {
    let default_f = PeriodicFn::sine_mode(0.05, 1, 0.0);
    let f = f.unwrap_or(&default_f);
    let mut params = cfg.params.clone();
    if params.minmax.velocity_bound.is_none() {
        // One velocity box for every field in the suite keeps the reduced grids identical.
        params.minmax.velocity_bound = Some(1.5 * (h.sup_abs_dp() + 0.6));
    }
    let checker = Checker { h, cfg, params };
    let mut report = PropertyReport::default();
    for &prop in &cfg.suite {
        let outcome: Result<Vec<PropertyResult>> = match prop {
            Property::Projector => checker.projector().map(|r| vec![r]),
            Property::Monotonicity => checker.monotonicity(k).map(|r| vec![r]),
            Property::Invariance => checker.invariance(f).map(|r| vec![r]),
            Property::AntiSymmetry => checker.anti_symmetry().map(|r| vec![r]),
            Property::Lipschitz => checker.lipschitz(),
            Property::Sandwich => checker.sandwich(f, p0),
            Property::QuasiLinearity => checker.quasi_linearity(),
        };
        match outcome {
            Ok(v) => report.results.extend(v),
            Err(e) => report.results.push(checker.result(prop, &[], f64::NAN, 0.0, false, format!("evaluation failed: {e}"))),
        }
    }
    report
}
