use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::grid::{MomentumGrid, TorusGrid};
use crate::error::{Error, Result};

pub type PhaseFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type PhaseGrad = Arc<dyn Fn(f64, f64) -> (f64, f64) + Send + Sync>;

/// Row-equality threshold for the p-only flag.
pub const ROW_TOL: f64 = 1e-12;
/// Lower bound on discrete second differences in p for the convexity flag.
pub const CONVEXITY_SLACK: f64 = -1e-10;
/// Threshold on vanishing boundary rows for the compact-support flag.
pub const SUPPORT_TOL: f64 = 1e-12;
/// Threshold on mixed second differences for the separability flag.
pub const SEPARABLE_TOL: f64 = 1e-10;

const FD_STEP: f64 = 5e-4;

/// Fourth-order central difference of a scalar function.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Analytic phase-space function with an optional exact gradient.
#[derive(Clone)]
pub struct Analytic {
    value: PhaseFn,
    grad: Option<PhaseGrad>,
}

impl fmt::Debug for Analytic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Analytic").field("exact_gradient", &self.grad.is_some()).finish()
    }
}

impl Analytic {
    pub fn new(value: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { value: Arc::new(value), grad: None }
    }

    pub fn with_gradient(mut self, grad: impl Fn(f64, f64) -> (f64, f64) + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn has_exact_gradient(&self) -> bool {
        self.grad.is_some()
    }

    pub fn eval(&self, q: f64, p: f64) -> f64 {
        (self.value)(q, p)
    }

    /// `(dH/dq, dH/dp)`, exact when available, fourth-order differences otherwise.
    pub fn gradient(&self, q: f64, p: f64) -> (f64, f64) {
        match &self.grad {
            Some(g) => g(q, p),
            None => (
                central_diff(|s| (self.value)(s, p), q, FD_STEP),
                central_diff(|s| (self.value)(q, s), p, FD_STEP),
            ),
        }
    }

    /// Mixed second derivative `d2H/dqdp`.
    pub fn mixed(&self, q: f64, p: f64) -> f64 {
        central_diff(|s| self.gradient(q, s).0, p, FD_STEP)
    }

    /// Second derivative in p.
    pub fn dpp(&self, q: f64, p: f64) -> f64 {
        central_diff(|s| self.gradient(q, s).1, p, FD_STEP)
    }

    /// Second derivative in q.
    pub fn dqq(&self, q: f64, p: f64) -> f64 {
        central_diff(|s| self.gradient(s, p).0, q, FD_STEP)
    }

    pub fn scaled(&self, c: f64) -> Analytic {
        let v = self.clone();
        let g = self.clone();
        Analytic::new(move |q, p| c * v.eval(q, p)).with_gradient(move |q, p| {
            let (a, b) = g.gradient(q, p);
            (c * a, c * b)
        })
    }

    pub fn sum(&self, other: &Analytic) -> Analytic {
        let (a, b) = (self.clone(), other.clone());
        let (ga, gb) = (self.clone(), other.clone());
        Analytic::new(move |q, p| a.eval(q, p) + b.eval(q, p)).with_gradient(move |q, p| {
            let (x, y) = ga.gradient(q, p);
            let (u, v) = gb.gradient(q, p);
            (x + u, y + v)
        })
    }
}

/// A 1-periodic function of q with derivatives, used for shears and initial data.
#[derive(Clone)]
pub struct PeriodicFn {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    df: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    d2f: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for PeriodicFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicFn").finish_non_exhaustive()
    }
}

impl PeriodicFn {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f), df: None, d2f: None }
    }

    pub fn with_derivatives(
        mut self,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.df = Some(Arc::new(df));
        self.d2f = Some(Arc::new(d2f));
        self
    }

    pub fn zero() -> Self {
        Self::new(|_| 0.0).with_derivatives(|_| 0.0, |_| 0.0)
    }

    /// `a sin(2 pi m q + phase) / (2 pi m)`, whose derivative is `a cos(2 pi m q + phase)`.
    pub fn sine_mode(a: f64, m: u32, phase: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * m as f64;
        Self::new(move |q| a * (w * q + phase).sin() / w)
            .with_derivatives(move |q| a * (w * q + phase).cos(), move |q| -a * w * (w * q + phase).sin())
    }

    /// `a cos(2 pi m q + phase)`.
    pub fn cosine_mode(a: f64, m: u32, phase: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * m as f64;
        Self::new(move |q| a * (w * q + phase).cos()).with_derivatives(
            move |q| -a * w * (w * q + phase).sin(),
            move |q| -a * w * w * (w * q + phase).cos(),
        )
    }

    pub fn eval(&self, q: f64) -> f64 {
        (self.f)(q)
    }

    pub fn deriv(&self, q: f64) -> f64 {
        match &self.df {
            Some(d) => d(q),
            None => central_diff(|s| (self.f)(s), q, FD_STEP),
        }
    }

    pub fn second_deriv(&self, q: f64) -> f64 {
        match &self.d2f {
            Some(d) => d(q),
            None => central_diff(|s| self.deriv(s), q, FD_STEP),
        }
    }

    pub fn negated(&self) -> Self {
        let (a, b, c) = (self.clone(), self.clone(), self.clone());
        Self::new(move |q| -a.eval(q)).with_derivatives(move |q| -b.deriv(q), move |q| -c.second_deriv(q))
    }

    pub fn sample(&self, grid: &TorusGrid) -> Vec<f64> {
        grid.nodes().into_iter().map(|q| self.eval(q)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Bicubic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldFlags {
    pub is_p_only: bool,
    pub is_convex_in_p: bool,
    pub is_compactly_supported: bool,
    pub is_separable: bool,
}

/// Sampled Hamiltonian `H(q,p)` on a torus times momentum grid.
///
/// Values are stored row-major with q as the slow index. Evaluation goes
/// through the analytic closure when one is attached and through the
/// interpolated table otherwise; at grid nodes the two agree exactly.
#[derive(Clone, Debug)]
pub struct HamiltonianField {
    name: String,
    qgrid: TorusGrid,
    pgrid: MomentumGrid,
    values: Vec<f64>,
    flags: FieldFlags,
    interpolation: Interpolation,
    analytic: Option<Analytic>,
    truncation: Option<f64>,
}

impl HamiltonianField {
    /// Builds a table-only field and infers its flags by sampling.
    pub fn from_table(
        name: impl Into<String>,
        qgrid: TorusGrid,
        pgrid: MomentumGrid,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != qgrid.len() * pgrid.len() {
            return Err(Error::InvalidField(format!(
                "table has {} values, grid needs {}",
                values.len(),
                qgrid.len() * pgrid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let (iq, ip) = (i / pgrid.len(), i % pgrid.len());
            return Err(Error::InvalidField(format!(
                "non-finite sample at q = {}, p = {}",
                qgrid.node(iq),
                pgrid.node(ip)
            )));
        }
        let flags = infer_flags(&values, qgrid.len(), pgrid.len());
        Ok(Self {
            name: name.into(),
            qgrid,
            pgrid,
            values,
            flags,
            interpolation: Interpolation::Bilinear,
            analytic: None,
            truncation: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn qgrid(&self) -> TorusGrid {
        self.qgrid
    }

    pub fn pgrid(&self) -> MomentumGrid {
        self.pgrid
    }

    pub fn flags(&self) -> FieldFlags {
        self.flags
    }

    pub fn is_p_only(&self) -> bool {
        self.flags.is_p_only
    }

    pub fn is_convex_in_p(&self) -> bool {
        self.flags.is_convex_in_p
    }

    pub fn is_compactly_supported(&self) -> bool {
        self.flags.is_compactly_supported
    }

    pub fn analytic(&self) -> Option<&Analytic> {
        self.analytic.as_ref()
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Self {
        self.interpolation = interpolation;
        self
    }

    pub fn truncation(&self) -> Option<f64> {
        self.truncation
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, iq: usize, ip: usize) -> f64 {
        self.values[iq * self.pgrid.len() + ip]
    }

    pub fn row(&self, iq: usize) -> &[f64] {
        let n = self.pgrid.len();
        &self.values[iq * n..(iq + 1) * n]
    }

    /// `H(q,p)`: analytic closure if present, table interpolation otherwise.
    pub fn value(&self, q: f64, p: f64) -> f64 {
        match &self.analytic {
            Some(a) => a.eval(q, p),
            None => self.interpolate(q, p),
        }
    }

    /// `(dH/dq, dH/dp)`.
    pub fn gradient(&self, q: f64, p: f64) -> (f64, f64) {
        match &self.analytic {
            Some(a) => a.gradient(q, p),
            None => {
                let h = 0.25 * self.qgrid.spacing().min(self.pgrid.spacing());
                (
                    central_diff(|s| self.interpolate(s, p), q, h),
                    central_diff(|s| self.interpolate(q, s), p, h),
                )
            }
        }
    }

    /// Table interpolation; momenta outside the grid use the nearest boundary row.
    pub fn interpolate(&self, q: f64, p: f64) -> f64 {
        match self.interpolation {
            Interpolation::Bilinear => self.bilinear(q, p),
            Interpolation::Bicubic => self.bicubic(q, p),
        }
    }

    fn bilinear(&self, q: f64, p: f64) -> f64 {
        let (iq, fq) = self.qgrid.locate(q);
        let iq1 = (iq + 1) % self.qgrid.len();
        let (ip, fp) = self.pgrid.locate(p);
        let v00 = self.at(iq, ip);
        let v01 = self.at(iq, ip + 1);
        let v10 = self.at(iq1, ip);
        let v11 = self.at(iq1, ip + 1);
        let a = v00 + fp * (v01 - v00);
        let b = v10 + fp * (v11 - v10);
        a + fq * (b - a)
    }

    fn bicubic(&self, q: f64, p: f64) -> f64 {
        let nq = self.qgrid.len() as isize;
        let np = self.pgrid.len();
        let (iq, fq) = self.qgrid.locate(q);
        let (ip, fp) = self.pgrid.locate(p);
        // Four-point stencil in p, shifted inward at the ends of the range.
        let (p0, tp) = if np < 4 {
            return self.bilinear(q, p);
        } else if ip == 0 {
            (0usize, fp - 1.0)
        } else if ip + 2 >= np {
            (np - 4, fp + (ip as f64 - (np - 4) as f64) - 1.0)
        } else {
            (ip - 1, fp)
        };
        let wq = lagrange4(fq);
        let wp = lagrange4(tp);
        let mut acc = 0.0;
        for (a, wa) in wq.iter().enumerate() {
            let row = ((iq as isize + a as isize - 1).rem_euclid(nq)) as usize;
            let mut r = 0.0;
            for (b, wb) in wp.iter().enumerate() {
                r += wb * self.at(row, p0 + b);
            }
            acc += wa * r;
        }
        acc
    }

    /// `sup |dH/dp|` over grid nodes.
    pub fn sup_abs_dp(&self) -> f64 {
        self.sup_over_nodes(|q, p| self.gradient(q, p).1.abs())
    }

    /// `sup |dH/dq|` over grid nodes.
    pub fn sup_abs_dq(&self) -> f64 {
        self.sup_over_nodes(|q, p| self.gradient(q, p).0.abs())
    }

    /// `sup |H|` over grid nodes.
    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sup |d2H/dqdp|` over grid nodes.
    pub fn sup_abs_mixed(&self) -> f64 {
        match &self.analytic {
            Some(a) => self.sup_over_nodes(|q, p| a.mixed(q, p).abs()),
            None => {
                let (nq, np) = (self.qgrid.len(), self.pgrid.len());
                let scale = self.qgrid.spacing() * self.pgrid.spacing();
                let mut m = 0.0_f64;
                for iq in 0..nq {
                    let iq1 = (iq + 1) % nq;
                    for ip in 0..np - 1 {
                        let d = self.at(iq1, ip + 1) - self.at(iq1, ip) - self.at(iq, ip + 1) + self.at(iq, ip);
                        m = m.max(d.abs() / scale);
                    }
                }
                m
            }
        }
    }

    /// `sup |d2H/dp2|` over grid nodes.
    pub fn sup_abs_dpp(&self) -> f64 {
        match &self.analytic {
            Some(a) => self.sup_over_nodes(|q, p| a.dpp(q, p).abs()),
            None => {
                let np = self.pgrid.len();
                let h2 = self.pgrid.spacing().powi(2);
                let mut m = 0.0_f64;
                for iq in 0..self.qgrid.len() {
                    let r = self.row(iq);
                    for ip in 1..np - 1 {
                        m = m.max(((r[ip + 1] - 2.0 * r[ip] + r[ip - 1]) / h2).abs());
                    }
                }
                m
            }
        }
    }

    /// `sup |d2H/dq2|` over grid nodes.
    pub fn sup_abs_dqq(&self) -> f64 {
        match &self.analytic {
            Some(a) => self.sup_over_nodes(|q, p| a.dqq(q, p).abs()),
            None => {
                let nq = self.qgrid.len();
                let h2 = self.qgrid.spacing().powi(2);
                let mut m = 0.0_f64;
                for iq in 0..nq {
                    for ip in 0..self.pgrid.len() {
                        let d = self.at((iq + 1) % nq, ip) - 2.0 * self.at(iq, ip) + self.at((iq + nq - 1) % nq, ip);
                        m = m.max((d / h2).abs());
                    }
                }
                m
            }
        }
    }

    fn sup_over_nodes(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut m = 0.0_f64;
        for iq in 0..self.qgrid.len() {
            let q = self.qgrid.node(iq);
            for ip in 0..self.pgrid.len() {
                m = m.max(f(q, self.pgrid.node(ip)));
            }
        }
        m
    }

    /// Returns the analytic closure or a closure over the interpolated table.
    pub fn as_analytic(&self) -> Analytic {
        match &self.analytic {
            Some(a) => a.clone(),
            None => {
                let me = Arc::new(self.clone());
                let g = me.clone();
                Analytic::new(move |q, p| me.interpolate(q, p)).with_gradient(move |q, p| g.gradient(q, p))
            }
        }
    }

    /// The same field restricted to a new pair of grids (resampled through `value`).
    pub fn resample(&self, qgrid: TorusGrid, pgrid: MomentumGrid) -> Result<Self> {
        match &self.analytic {
            Some(a) => {
                let mut f = sample_hamiltonian(self.name.clone(), a.clone(), qgrid, pgrid)?;
                f.truncation = self.truncation;
                f.interpolation = self.interpolation;
                Ok(f)
            }
            None => {
                let mut values = Vec::with_capacity(qgrid.len() * pgrid.len());
                for iq in 0..qgrid.len() {
                    for ip in 0..pgrid.len() {
                        values.push(self.interpolate(qgrid.node(iq), pgrid.node(ip)));
                    }
                }
                HamiltonianField::from_table(self.name.clone(), qgrid, pgrid, values)
            }
        }
    }

    /// `c * H` on the same grids.
    pub fn scaled(&self, c: f64, name: impl Into<String>) -> Result<Self> {
        self.map_values(name, self.analytic.as_ref().map(|a| a.scaled(c)), |v| c * v)
    }

    /// `H + K` on the grids of `self`.
    pub fn plus(&self, other: &HamiltonianField, name: impl Into<String>) -> Result<Self> {
        match (&self.analytic, &other.analytic) {
            (Some(a), Some(b)) => sample_hamiltonian(name, a.sum(b), self.qgrid, self.pgrid),
            _ => {
                let mut values = Vec::with_capacity(self.values.len());
                for iq in 0..self.qgrid.len() {
                    for ip in 0..self.pgrid.len() {
                        let (q, p) = (self.qgrid.node(iq), self.pgrid.node(ip));
                        values.push(self.at(iq, ip) + other.value(q, p));
                    }
                }
                HamiltonianField::from_table(name, self.qgrid, self.pgrid, values)
            }
        }
    }

    fn map_values(&self, name: impl Into<String>, analytic: Option<Analytic>, f: impl Fn(f64) -> f64) -> Result<Self> {
        match analytic {
            Some(a) => sample_hamiltonian(name, a, self.qgrid, self.pgrid),
            None => HamiltonianField::from_table(name, self.qgrid, self.pgrid, self.values.iter().map(|&v| f(v)).collect()),
        }
    }
}

/// Fourth-order Lagrange weights on nodes -1, 0, 1, 2 at offset `t`.
fn lagrange4(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

fn infer_flags(values: &[f64], nq: usize, np: usize) -> FieldFlags {
    let scale = values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let row0 = &values[..np];
    let is_p_only = (1..nq).all(|iq| {
        values[iq * np..(iq + 1) * np].iter().zip(row0).all(|(a, b)| (a - b).abs() <= ROW_TOL * scale)
    });
    let is_convex_in_p = np < 3
        || (0..nq).all(|iq| {
            let r = &values[iq * np..(iq + 1) * np];
            (1..np - 1).all(|i| r[i + 1] - 2.0 * r[i] + r[i - 1] >= CONVEXITY_SLACK)
        });
    let is_compactly_supported =
        (0..nq).all(|iq| values[iq * np].abs() <= SUPPORT_TOL && values[iq * np + np - 1].abs() <= SUPPORT_TOL);
    let is_separable = (0..nq).all(|iq| {
        let iq1 = (iq + 1) % nq;
        (0..np - 1).all(|ip| {
            let d = values[iq1 * np + ip + 1] - values[iq1 * np + ip] - values[iq * np + ip + 1] + values[iq * np + ip];
            d.abs() <= SEPARABLE_TOL * scale
        })
    });
    FieldFlags { is_p_only, is_convex_in_p, is_compactly_supported, is_separable }
}

/// Samples an analytic closure on the grids, validating periodicity and finiteness.
pub fn sample_hamiltonian(
    name: impl Into<String>,
    expr: Analytic,
    qgrid: TorusGrid,
    pgrid: MomentumGrid,
) -> Result<HamiltonianField> {
    let probes = [0.0, 0.37 * qgrid.spacing(), 0.5];
    for ip in 0..pgrid.len() {
        let p = pgrid.node(ip);
        for &q in &probes {
            let (a, b) = (expr.eval(q, p), expr.eval(q + 1.0, p));
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::InvalidField(format!("non-finite sample at q = {q}, p = {p}")));
            }
            let mismatch = (a - b).abs();
            if mismatch > 1e-9 * (1.0 + a.abs()) {
                return Err(Error::NonPeriodic { p, mismatch });
            }
        }
    }
    let mut values = Vec::with_capacity(qgrid.len() * pgrid.len());
    for iq in 0..qgrid.len() {
        let q = qgrid.node(iq);
        for ip in 0..pgrid.len() {
            values.push(expr.eval(q, pgrid.node(ip)));
        }
    }
    let mut field = HamiltonianField::from_table(name, qgrid, pgrid, values)?;
    field.analytic = Some(expr);
    Ok(field)
}

/// Quintic smoothstep, `C^2` with vanishing first and second derivatives at 0 and 1.
fn smoothstep(u: f64) -> (f64, f64) {
    if u <= 0.0 {
        (0.0, 0.0)
    } else if u >= 1.0 {
        (1.0, 0.0)
    } else {
        let u2 = u * u;
        (u2 * u * (10.0 - 15.0 * u + 6.0 * u2), 30.0 * u2 * (1.0 - u) * (1.0 - u))
    }
}

/// Plateau cutoff: 1 on `[0, A]`, 0 beyond `2A`, and its derivative in `s = |p|`.
pub fn plateau_cutoff(s: f64, a: f64) -> (f64, f64) {
    let (v, dv) = smoothstep((s - a) / a);
    (1.0 - v, -dv / a)
}

/// Multiplies `H` by a `C^2` plateau cutoff in `|p|`, giving a compactly supported field.
///
/// Truncating an already truncated field at the same level returns it unchanged.
pub fn truncate_coercive(h: &HamiltonianField, a: f64) -> Result<HamiltonianField> {
    if !(a > 0.0) {
        return Err(Error::InvalidInput(format!("cutoff level must be positive, got {a}")));
    }
    let pg = h.pgrid();
    if pg.p_min() > -2.0 * a || pg.p_max() < 2.0 * a {
        return Err(Error::DomainTooSmall(format!(
            "support [-{}, {}] exceeds momentum grid [{}, {}]",
            2.0 * a,
            2.0 * a,
            pg.p_min(),
            pg.p_max()
        )));
    }
    if h.truncation() == Some(a) {
        return Ok(h.clone());
    }
    if !h.is_p_only() {
        let mins: Vec<(f64, f64)> = (0..pg.len())
            .map(|ip| {
                let m = (0..h.qgrid().len()).map(|iq| h.at(iq, ip)).fold(f64::INFINITY, f64::min);
                (pg.node(ip), m)
            })
            .collect();
        let outward = |w: &[(f64, f64)]| w[1].1 >= w[0].1 - 1e-12;
        let right: Vec<_> = mins.iter().copied().filter(|(p, _)| *p >= a).collect();
        let mut left: Vec<_> = mins.iter().copied().filter(|(p, _)| *p <= -a).collect();
        left.reverse();
        if !right.windows(2).all(outward) || !left.windows(2).all(outward) {
            return Err(Error::InvalidInput(format!(
                "'{}' is neither p-only nor coercive beyond |p| = {a}",
                h.name()
            )));
        }
    }
    let base = h.as_analytic();
    let (v, g) = (base.clone(), base);
    let cut = Analytic::new(move |q, p| plateau_cutoff(p.abs(), a).0 * v.eval(q, p)).with_gradient(move |q, p| {
        let (chi, dchi) = plateau_cutoff(p.abs(), a);
        let (hq, hp) = g.gradient(q, p);
        (chi * hq, chi * hp + dchi * p.signum() * g.eval(q, p))
    });
    let mut out = sample_hamiltonian(format!("{}|trunc({a})", h.name()), cut, h.qgrid(), pg)?;
    out.truncation = Some(a);
    out.interpolation = h.interpolation();
    Ok(out)
}

/// `H o psi` for the exact shear `psi(q,p) = (q, p + f'(q))`.
pub fn shear_conjugate(h: &HamiltonianField, f: &PeriodicFn) -> Result<HamiltonianField> {
    let pg = h.pgrid();
    let exact = h.analytic().is_some() || h.is_compactly_supported();
    if !exact {
        for iq in 0..h.qgrid().len() {
            let d = f.deriv(h.qgrid().node(iq));
            for p in [pg.p_min(), pg.p_max()] {
                if !pg.contains(p + d) {
                    return Err(Error::RangeExceeded { p: p + d, p_min: pg.p_min(), p_max: pg.p_max() });
                }
            }
        }
    }
    let base = h.as_analytic();
    let (v, g) = (base.clone(), base);
    let (fv, fg) = (f.clone(), f.clone());
    let sheared = Analytic::new(move |q, p| v.eval(q, p + fv.deriv(q))).with_gradient(move |q, p| {
        let s = p + fg.deriv(q);
        let (hq, hp) = g.gradient(q, s);
        (hq + hp * fg.second_deriv(q), hp)
    });
    let mut out = sample_hamiltonian(format!("{}|shear", h.name()), sheared, h.qgrid(), pg)?;
    out.interpolation = h.interpolation();
    if h.analytic().is_none() {
        // Table-only inputs stay table-only: evaluation then follows the resampled table.
        out.analytic = None;
    }
    Ok(out)
}

/// 1-periodic time-dependent Hamiltonian sampled on uniform time slices.
#[derive(Clone)]
pub struct TimeDependentField {
    name: String,
    slices: Vec<HamiltonianField>,
    closure: Option<Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for TimeDependentField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeDependentField")
            .field("name", &self.name)
            .field("slices", &self.slices.len())
            .finish()
    }
}

impl TimeDependentField {
    /// Samples `H(t,q,p)` at `t_j = j/m`, `j < m`.
    pub fn sample(
        name: impl Into<String>,
        h: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        m: usize,
        qgrid: TorusGrid,
        pgrid: MomentumGrid,
    ) -> Result<Self> {
        let name = name.into();
        if m < 8 {
            return Err(Error::InvalidInput(format!("time sampling needs at least 8 slices, got {m}")));
        }
        let h: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync> = Arc::new(h);
        for &(q, p) in &[(0.3, 0.2), (0.7, -0.4)] {
            let (a, b) = (h(0.0, q, p), h(1.0, q, p));
            if (a - b).abs() > 1e-9 * (1.0 + a.abs()) {
                return Err(Error::InvalidInput(format!("'{name}' is not 1-periodic in t")));
            }
        }
        let mut slices = Vec::with_capacity(m);
        for j in 0..m {
            let t = j as f64 / m as f64;
            let hh = h.clone();
            let a = Analytic::new(move |q, p| hh(t, q, p));
            slices.push(sample_hamiltonian(format!("{name}@t={t}"), a, qgrid, pgrid)?);
        }
        Ok(Self { name, slices, closure: Some(h) })
    }

    /// Wraps an autonomous field as a constant-in-time family.
    pub fn autonomous(h: &HamiltonianField, m: usize) -> Result<Self> {
        if m < 8 {
            return Err(Error::InvalidInput(format!("time sampling needs at least 8 slices, got {m}")));
        }
        let a = h.as_analytic();
        Ok(Self {
            name: h.name().to_string(),
            slices: vec![h.clone(); m],
            closure: Some(Arc::new(move |_t, q, p| a.eval(q, p))),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn slices(&self) -> &[HamiltonianField] {
        &self.slices
    }

    pub fn qgrid(&self) -> TorusGrid {
        self.slices[0].qgrid()
    }

    pub fn pgrid(&self) -> MomentumGrid {
        self.slices[0].pgrid()
    }

    /// `H(t,q,p)`, linear in t between slices when no closure is attached.
    pub fn value(&self, t: f64, q: f64, p: f64) -> f64 {
        match &self.closure {
            Some(c) => c(t.rem_euclid(1.0), q, p),
            None => {
                let m = self.slices.len();
                let s = t.rem_euclid(1.0) * m as f64;
                let j = (s.floor() as usize) % m;
                let w = s - s.floor();
                (1.0 - w) * self.slices[j].value(q, p) + w * self.slices[(j + 1) % m].value(q, p)
            }
        }
    }

    pub fn closure(&self) -> Option<Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>> {
        self.closure.clone()
    }
}

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    format: String,
    version: u32,
    name: String,
    q_nodes: usize,
    p_min: f64,
    p_max: f64,
    p_nodes: usize,
    flags: FieldFlags,
    interpolation: Interpolation,
    payload: Payload,
}

/// Encoding of the sample block that follows the JSON header line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Csv,
    F64Le,
}

const FIELD_FORMAT: &str = "effham-field";

/// Writes a field as one JSON header line followed by the sample payload.
pub fn write_field<W: std::io::Write>(field: &HamiltonianField, mut w: W, payload: Payload) -> Result<()> {
    let header = FieldHeader {
        format: FIELD_FORMAT.into(),
        version: 1,
        name: field.name().into(),
        q_nodes: field.qgrid().len(),
        p_min: field.pgrid().p_min(),
        p_max: field.pgrid().p_max(),
        p_nodes: field.pgrid().len(),
        flags: field.flags(),
        interpolation: field.interpolation(),
        payload,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    match payload {
        Payload::Csv => {
            let mut cw = csv::Writer::from_writer(w);
            cw.write_record(["q", "p", "H"])?;
            for iq in 0..field.qgrid().len() {
                for ip in 0..field.pgrid().len() {
                    cw.write_record(&[
                        format!("{:e}", field.qgrid().node(iq)),
                        format!("{:e}", field.pgrid().node(ip)),
                        format!("{:e}", field.at(iq, ip)),
                    ])?;
                }
            }
            cw.flush()?;
        }
        Payload::F64Le => {
            for v in field.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a field written by [`write_field`]; the result is table-only.
pub fn read_field<R: std::io::BufRead>(mut r: R) -> Result<HamiltonianField> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: FieldHeader = serde_json::from_str(line.trim_end())?;
    if header.format != FIELD_FORMAT {
        return Err(Error::SchemaMismatch(format!("unknown field format '{}'", header.format)));
    }
    let qgrid = TorusGrid::new(header.q_nodes)?;
    let pgrid = MomentumGrid::new(header.p_min, header.p_max, header.p_nodes)?;
    let n = qgrid.len() * pgrid.len();
    let values = match header.payload {
        Payload::Csv => {
            let mut cr = csv::Reader::from_reader(r);
            let mut v = Vec::with_capacity(n);
            for rec in cr.records() {
                let rec = rec?;
                let x: f64 = rec
                    .get(2)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::SchemaMismatch("malformed field row".into()))?;
                v.push(x);
            }
            v
        }
        Payload::F64Le => {
            let mut buf = Vec::new();
            r.read_to_end(&mut buf)?;
            if buf.len() != 8 * n {
                return Err(Error::SchemaMismatch(format!("expected {} bytes, found {}", 8 * n, buf.len())));
            }
            buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect()
        }
    };
    Ok(HamiltonianField::from_table(header.name, qgrid, pgrid, values)?.with_interpolation(header.interpolation))
}
