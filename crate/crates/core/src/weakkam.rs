//! Convex-case oracles: Legendre duality, the Lax-Oleinik semigroup, long-time
//! averages of the tilted action, and the exact level-set formula for 1-D
//! mechanical Hamiltonians.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{HamiltonianField, MomentumGrid, TorusGrid};
use crate::error::{Error, Result};
use crate::homog::{Backend, EffectiveHamiltonian};
use crate::minmax::legendre_value;

/// Second differences of `L` in the velocity may dip this far below zero.
pub const CONVEXITY_TOL: f64 = -1e-9;
/// Default horizon of the long-time average.
pub const DEFAULT_HORIZON: f64 = 50.0;
/// Default Lax-Oleinik time step.
pub const DEFAULT_STEP: f64 = 0.02;
/// Default number of torus nodes for long-time averages.
pub const DEFAULT_NODES: usize = 512;
/// Velocity window relative to `sup |dH/dp|`.
pub const WINDOW_FACTOR: f64 = 1.5;
/// Midpoint panels of the level-set quadrature.
pub const LEVELSET_PANELS: usize = 10_000;
/// Bisection tolerance of the level-set energy.
pub const LEVELSET_TOL: f64 = 1e-10;

/// `L(q, ξ)` on torus nodes times a symmetric uniform velocity grid.
#[derive(Clone, Debug)]
pub struct LagrangianTable {
    qgrid: TorusGrid,
    /// Velocity spacing; nodes are `j dv` for `|j| <= half`.
    dv: f64,
    half: usize,
    values: Vec<f64>,
}

impl LagrangianTable {
    fn velocity_count(&self) -> usize {
        2 * self.half + 1
    }

    pub fn qgrid(&self) -> TorusGrid {
        self.qgrid
    }

    pub fn velocities(&self) -> Vec<f64> {
        (0..self.velocity_count()).map(|j| self.velocity(j)).collect()
    }

    fn velocity(&self, j: usize) -> f64 {
        (j as f64 - self.half as f64) * self.dv
    }

    pub fn xi_max(&self) -> f64 {
        self.half as f64 * self.dv
    }

    pub fn at(&self, iq: usize, j: usize) -> f64 {
        self.values[iq * self.velocity_count() + j]
    }

    /// `L(q_iq, ξ)` by linear interpolation; `None` outside the velocity range.
    pub fn value(&self, iq: usize, xi: f64) -> Option<f64> {
        let s = xi / self.dv + self.half as f64;
        if s < -1e-9 || s > (2 * self.half) as f64 + 1e-9 {
            return None;
        }
        let s = s.clamp(0.0, (2 * self.half) as f64);
        let j = (s.floor() as usize).min(2 * self.half - 1);
        let f = s - j as f64;
        let row = &self.values[iq * self.velocity_count()..];
        Some(row[j] + f * (row[j + 1] - row[j]))
    }

    /// Most negative second difference in `ξ` divided by `dv²`.
    pub fn convexity_defect(&self) -> f64 {
        let nv = self.velocity_count();
        self.values
            .chunks(nv)
            .flat_map(|r| r.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]) / (self.dv * self.dv)))
            .fold(0.0_f64, f64::min)
    }

    /// `H(q, p) = max_ξ [p ξ − L(q, ξ)]` over the velocity nodes.
    pub fn dual(&self, iq: usize, p: f64) -> f64 {
        (0..self.velocity_count())
            .map(|j| p * self.velocity(j) - self.at(iq, j))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Exact Legendre values (by bisection on `dH/dp`) on velocities `j dv`, `|j| <= half`.
    pub fn exact(h: &HamiltonianField, qgrid: TorusGrid, dv: f64, half: usize) -> Result<Self> {
        require_convex(h)?;
        if !(dv > 0.0) || half == 0 {
            return Err(Error::InvalidInput(format!("velocity grid needs dv > 0 and half >= 1, got {dv}, {half}")));
        }
        let nv = 2 * half + 1;
        let values: Vec<f64> = (0..qgrid.len() * nv)
            .into_par_iter()
            .map(|i| lagrangian(h, qgrid.node(i / nv), (i % nv) as f64 * dv - half as f64 * dv))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { qgrid, dv, half, values })
    }

    /// Table whose velocities are exactly the displacements `m h / τ` of one Lax-Oleinik step.
    pub fn for_step(h: &HamiltonianField, qgrid: TorusGrid, tau: f64, xi_max: f64) -> Result<Self> {
        let dv = qgrid.spacing() / tau;
        let half = ((xi_max / dv).ceil() as usize).max(1);
        Self::exact(h, qgrid, dv, half)
    }
}

impl LagrangianTable {
    /// `q`-independent table `L(ξ) = max_i [p_i ξ − h_i]` from samples of a convex `p`-only Hamiltonian.
    pub fn from_samples(qgrid: TorusGrid, dv: f64, half: usize, ps: &[f64], hs: &[f64]) -> Result<Self> {
        if !(dv > 0.0) || half == 0 || ps.is_empty() || ps.len() != hs.len() {
            return Err(Error::InvalidInput(format!(
                "need dv > 0, half >= 1 and matching samples, got {dv}, {half}, {} / {}",
                ps.len(),
                hs.len()
            )));
        }
        let row: Vec<f64> = (0..=2 * half)
            .map(|j| {
                let xi = (j as f64 - half as f64) * dv;
                ps.iter().zip(hs).map(|(p, h)| p * xi - h).fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let values = (0..qgrid.len()).flat_map(|_| row.iter().copied()).collect();
        Ok(Self { qgrid, dv, half, values })
    }
}

/// `L(q, v)`, or `+∞` when `dH/dp` never reaches `v` (the velocity is unreachable).
pub(crate) fn lagrangian(h: &HamiltonianField, q: f64, v: f64) -> Result<f64> {
    match legendre_value(h, q, v) {
        Err(Error::NotCoercive(_)) => Ok(f64::INFINITY),
        other => other,
    }
}

pub(crate) fn require_convex(h: &HamiltonianField) -> Result<()> {
    if h.is_convex_in_p() {
        Ok(())
    } else {
        Err(Error::NotConvex(h.name().to_string()))
    }
}

/// Discrete Legendre transform of the sampled table of `H`.
///
/// Velocities are uniform on `[−ξ_max, ξ_max]` with `ξ_max = 1.5 sup|dH/dp|` and
/// as many nodes as the momentum grid (made odd). Concavity of `p ξ − H` in `p`
/// makes the maximizer nondecreasing in `ξ`, so one forward scan per row suffices.
pub fn legendre(h: &HamiltonianField) -> Result<LagrangianTable> {
    require_convex(h)?;
    let pg = h.pgrid();
    let ps = pg.nodes();
    let half = (pg.len() / 2).max(1);
    let xi_max = (WINDOW_FACTOR * h.sup_abs_dp()).max(1e-12);
    let dv = xi_max / half as f64;
    let nv = 2 * half + 1;
    let mut values = Vec::with_capacity(h.qgrid().len() * nv);
    for iq in 0..h.qgrid().len() {
        let row = h.row(iq);
        let mut arg = 0;
        for j in 0..nv {
            let xi = j as f64 * dv - xi_max;
            let obj = |i: usize| ps[i] * xi - row[i];
            while arg + 1 < ps.len() && obj(arg + 1) >= obj(arg) {
                arg += 1;
            }
            values.push(obj(arg));
        }
    }
    Ok(LagrangianTable { qgrid: h.qgrid(), dv, half, values })
}

/// `u(q)` on torus nodes at time `t`, evolved with the Lagrangian tilted by `−p ξ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub qgrid: TorusGrid,
    pub u: Vec<f64>,
    pub t: f64,
    pub tilt: f64,
}

impl ValueFunction {
    pub fn new(qgrid: TorusGrid, u: Vec<f64>, tilt: f64) -> Result<Self> {
        if u.len() != qgrid.len() {
            return Err(Error::GridMismatch(format!("{} values on a grid of {} nodes", u.len(), qgrid.len())));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("value function must be finite".into()));
        }
        Ok(Self { qgrid, u, t: 0.0, tilt })
    }

    pub fn zero(qgrid: TorusGrid, tilt: f64) -> Self {
        Self { qgrid, u: vec![0.0; qgrid.len()], t: 0.0, tilt }
    }

    pub fn min(&self) -> f64 {
        self.u.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.u.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest slope between neighboring nodes.
    pub fn lipschitz(&self) -> f64 {
        let n = self.u.len();
        (0..n).map(|i| (self.u[(i + 1) % n] - self.u[i]).abs()).fold(0.0, f64::max) * n as f64
    }
}

/// Precomputed step costs `τ (L(y, ξ_m) − p ξ_m)` for displacements `|m| <= window`.
struct StepKernel {
    window: usize,
    /// Row-major `[y][m + window]`.
    cost: Vec<f64>,
}

impl StepKernel {
    fn new(table: &LagrangianTable, tau: f64, tilt: f64) -> Result<Self> {
        let n = table.qgrid.len();
        let h = table.qgrid.spacing();
        let window = ((table.xi_max() * tau / h) * (1.0 + 1e-12)).floor() as usize;
        if window == 0 {
            return Err(Error::DomainTooSmall(format!(
                "velocity range {} does not reach one grid cell per step {tau}",
                table.xi_max()
            )));
        }
        let width = 2 * window + 1;
        let matched = ((table.dv * tau) / h - 1.0).abs() < 1e-12;
        let mut cost = Vec::with_capacity(n * width);
        for y in 0..n {
            for j in 0..width {
                let m = j as isize - window as isize;
                let xi = m as f64 * h / tau;
                let l = if matched {
                    table.at(y, (table.half as isize + m) as usize)
                } else {
                    table.value(y, xi).expect("window lies inside the velocity range")
                };
                cost.push(tau * (l - tilt * xi));
            }
        }
        Ok(Self { window, cost })
    }

    /// One step on `u`, whose length is a multiple of the cell size (a finite cover of the torus).
    fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        let n = u.len();
        let w = self.window as isize;
        let width = 2 * self.window + 1;
        let cell = self.cost.len() / width;
        let mut out = vec![0.0; n];
        let mut hit = None;
        for (x, o) in out.iter_mut().enumerate() {
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for m in -w..=w {
                let y = (x as isize - m).rem_euclid(n as isize) as usize;
                let v = u[y] + self.cost[(y % cell) * width + (m + w) as usize];
                if v < best {
                    best = v;
                    arg = m;
                }
            }
            if arg.unsigned_abs() == self.window && (2 * self.window + 1) < n && hit.is_none() {
                hit = Some(x);
            }
            *o = best;
        }
        match hit {
            Some(node) => Err(Error::WindowTooSmall { node, window: self.window }),
            None => Ok(out),
        }
    }
}

/// One step `u'(x) = min_y [u(y) + τ (L(y, (x−y)/τ) − p (x−y)/τ)]` over lifted nodes
/// `y` with `|x − y| <= ξ_max τ`.
pub fn lax_oleinik_step(u: &ValueFunction, table: &LagrangianTable, tau: f64) -> Result<ValueFunction> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {tau}")));
    }
    if u.qgrid != table.qgrid {
        return Err(Error::GridMismatch(format!(
            "value function on {} nodes, Lagrangian on {}",
            u.qgrid.len(),
            table.qgrid.len()
        )));
    }
    let kernel = StepKernel::new(table, tau, u.tilt)?;
    Ok(ValueFunction { qgrid: u.qgrid, u: kernel.apply(&u.u)?, t: u.t + tau, tilt: u.tilt })
}

/// Evolves `u` through `steps` steps, recording the state after every `record_every` steps.
pub fn lax_oleinik_evolve(
    u0: &ValueFunction,
    table: &LagrangianTable,
    tau: f64,
    steps: usize,
    record_every: usize,
) -> Result<Vec<ValueFunction>> {
    if u0.qgrid != table.qgrid {
        return Err(Error::GridMismatch("value function and Lagrangian grids differ".into()));
    }
    let kernel = StepKernel::new(table, tau, u0.tilt)?;
    let mut u = u0.u.clone();
    let mut out = Vec::new();
    for s in 1..=steps {
        u = kernel.apply(&u)?;
        if s % record_every.max(1) == 0 || s == steps {
            out.push(ValueFunction { qgrid: u0.qgrid, u: u.clone(), t: u0.t + s as f64 * tau, tilt: u0.tilt });
        }
    }
    Ok(out)
}

/// Evolves `u0`, sampled on the `copies`-fold cover of the table's torus (nodes
/// `j / n` for `j < copies * n`), recording after every `record_every` steps.
pub fn lax_oleinik_evolve_cover(
    u0: &[f64],
    copies: usize,
    table: &LagrangianTable,
    tau: f64,
    steps: usize,
    record_every: usize,
) -> Result<Vec<Vec<f64>>> {
    if copies == 0 || u0.len() != copies * table.qgrid.len() {
        return Err(Error::GridMismatch(format!(
            "{} values do not cover {copies} copies of {} nodes",
            u0.len(),
            table.qgrid.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {tau}")));
    }
    let kernel = StepKernel::new(table, tau, 0.0)?;
    let mut u = u0.to_vec();
    let mut out = Vec::new();
    for s in 1..=steps {
        u = kernel.apply(&u)?;
        if s % record_every.max(1) == 0 || s == steps {
            out.push(u.clone());
        }
    }
    Ok(out)
}

/// Resolution of the long-time average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaParams {
    pub horizon: f64,
    pub tau: f64,
    pub n_q: usize,
    /// Velocity window; default `1.5 sup|dH/dp|`.
    pub xi_max: Option<f64>,
    /// Window enlargements allowed after a boundary minimizer.
    pub max_growth: usize,
}

impl Default for AlphaParams {
    fn default() -> Self {
        Self { horizon: DEFAULT_HORIZON, tau: DEFAULT_STEP, n_q: DEFAULT_NODES, xi_max: None, max_growth: 4 }
    }
}

/// Long-time average of one tilt, with its raw and extrapolated forms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaEstimate {
    pub p: f64,
    /// `(min u(T/2) − min u(T)) / (T/2)`.
    pub extrapolated: f64,
    /// `−min u(T) / T`.
    pub raw: f64,
}

fn steps_for(t: f64, tau: f64) -> Result<usize> {
    let s = (t / tau).round();
    if !(s >= 2.0) || (s * tau - t).abs() > 1e-9 * t.max(1.0) || s as usize % 2 != 0 {
        return Err(Error::InvalidInput(format!("horizon {t} must be an even multiple of the step {tau}")));
    }
    Ok(s as usize)
}

fn alpha_with_table(table: &LagrangianTable, p: f64, params: &AlphaParams) -> Result<AlphaEstimate> {
    let steps = steps_for(params.horizon, params.tau)?;
    let u0 = ValueFunction::zero(table.qgrid, p);
    let states = lax_oleinik_evolve(&u0, table, params.tau, steps, steps / 2)?;
    let (mid, end) = (states[0].min(), states[1].min());
    let t = params.horizon;
    Ok(AlphaEstimate { p, extrapolated: (mid - end) / (0.5 * t), raw: -end / t })
}

/// `H̄(p)` as the growth rate `−lim min u(T)/T` of the tilted Lax-Oleinik semigroup from `u = 0`.
pub fn alpha_effective(h: &HamiltonianField, p: f64, horizon: f64, tau: f64) -> Result<f64> {
    let params = AlphaParams { horizon, tau, ..AlphaParams::default() };
    alpha_curve_at(h, &[p], &params).map(|v| v[0].extrapolated)
}

fn alpha_curve_at(h: &HamiltonianField, ps: &[f64], params: &AlphaParams) -> Result<Vec<AlphaEstimate>> {
    require_convex(h)?;
    let qgrid = TorusGrid::new(params.n_q)?;
    let mut xi_max = params.xi_max.unwrap_or(WINDOW_FACTOR * h.sup_abs_dp()).max(qgrid.spacing() / params.tau);
    for _ in 0..=params.max_growth {
        let table = LagrangianTable::for_step(h, qgrid, params.tau, xi_max)?;
        match ps.par_iter().map(|&p| alpha_with_table(&table, p, params)).collect::<Result<Vec<_>>>() {
            Err(Error::WindowTooSmall { .. }) => xi_max *= WINDOW_FACTOR,
            other => return other,
        }
    }
    Err(Error::DomainTooSmall(format!("velocity window {xi_max} still too small after growth")))
}

/// `H̄` on a momentum grid by long-time averages. The error estimate is the
/// largest gap between the extrapolated and raw averages plus the velocity
/// quantization `dv² sup L_ξξ / 8`, with `L_ξξ` bounded by the table's second differences.
pub fn alpha_curve(h: &HamiltonianField, pgrid: MomentumGrid, params: &AlphaParams) -> Result<EffectiveHamiltonian> {
    let est = alpha_curve_at(h, &pgrid.nodes(), params)?;
    let values: Vec<f64> = est.iter().map(|e| e.extrapolated).collect();
    let gap = est.iter().map(|e| (e.extrapolated - e.raw).abs()).fold(0.0, f64::max);
    let dv = 1.0 / (params.n_q as f64 * params.tau);
    let qgrid = TorusGrid::new(params.n_q)?;
    let probe = LagrangianTable::exact(h, qgrid, dv, 3)?;
    let curvature = probe
        .values
        .chunks(7)
        .flat_map(|r| r.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]) / (dv * dv)))
        .fold(0.0_f64, f64::max);
    let quantization = dv * dv * curvature / 8.0;
    Ok(EffectiveHamiltonian::new(h.name(), Backend::Weakkam, pgrid, values)?
        .with_error_estimate(gap + quantization)
        .with_resolution("horizon", params.horizon)
        .with_resolution("tau", params.tau)
        .with_resolution("n_q", params.n_q as f64))
}

/// The potential of a mechanical Hamiltonian `1/2 p² − V(q)`, sampled at quadrature midpoints.
#[derive(Clone, Debug)]
pub struct Levelset {
    /// `V` at the midpoints of `panels` equal panels.
    potential: Vec<f64>,
    min_v: f64,
    max_v: f64,
}

impl Levelset {
    /// Detects the mechanical form on the sampled table and samples `V` on `panels` midpoints.
    pub fn new(h: &HamiltonianField, panels: usize) -> Result<Self> {
        let pg = h.pgrid();
        let ps = pg.nodes();
        let scale = 1.0 + h.sup_abs();
        for iq in 0..h.qgrid().len() {
            let row = h.row(iq);
            let base = row[0] - 0.5 * ps[0] * ps[0];
            if row.iter().zip(&ps).any(|(v, p)| (v - 0.5 * p * p - base).abs() > 1e-9 * scale) {
                return Err(Error::NotMechanical(h.name().to_string()));
            }
        }
        if panels == 0 {
            return Err(Error::InvalidInput("quadrature needs at least one panel".into()));
        }
        let p0 = ps[0];
        let potential: Vec<f64> =
            (0..panels).map(|i| 0.5 * p0 * p0 - h.value((i as f64 + 0.5) / panels as f64, p0)).collect();
        // Panel endpoints join the midpoints so that extrema at panel edges are seen.
        let edges = (0..panels).map(|i| 0.5 * p0 * p0 - h.value(i as f64 / panels as f64, p0));
        let all: Vec<f64> = potential.iter().copied().chain(edges).collect();
        let min_v = all.iter().copied().fold(f64::INFINITY, f64::min);
        let max_v = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { potential, min_v, max_v })
    }

    /// `I(λ) = ∫₀¹ √(2 (V(x) + λ)) dx`, defined for `λ >= −min V`.
    pub fn action(&self, lambda: f64) -> f64 {
        let n = self.potential.len() as f64;
        self.potential.iter().map(|v| (2.0 * (v + lambda)).max(0.0).sqrt()).sum::<f64>() / n
    }

    /// Lowest admissible energy `−min V`, the value on the flat piece.
    pub fn flat_value(&self) -> f64 {
        -self.min_v
    }

    /// Half-width `I(−min V)` of the flat piece.
    pub fn flat_radius(&self) -> f64 {
        self.action(self.flat_value())
    }

    /// `H̄(p)`: the flat value for `|p| <= I(−min V)`, else the root of `I(λ) = |p|`.
    pub fn value(&self, p: f64) -> f64 {
        let target = p.abs();
        let lo0 = self.flat_value();
        if target <= self.action(lo0) {
            return lo0;
        }
        let (mut lo, mut hi) = (lo0, lo0 + 0.5 * target * target + (self.max_v - self.min_v));
        while hi - lo > LEVELSET_TOL {
            let mid = 0.5 * (lo + hi);
            if self.action(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// `H̄(p)` of a mechanical Hamiltonian by the level-set formula with 10⁴ midpoint panels.
pub fn levelset_oracle(h: &HamiltonianField, p: f64) -> Result<f64> {
    Ok(Levelset::new(h, LEVELSET_PANELS)?.value(p))
}

/// Level-set curve on a grid; the error estimate is the change under halving the panel count.
pub fn levelset_curve(h: &HamiltonianField, pgrid: MomentumGrid) -> Result<EffectiveHamiltonian> {
    let fine = Levelset::new(h, LEVELSET_PANELS)?;
    let coarse = Levelset::new(h, LEVELSET_PANELS / 2)?;
    let nodes = pgrid.nodes();
    let values: Vec<f64> = nodes.iter().map(|&p| fine.value(p)).collect();
    let err = nodes.iter().zip(&values).map(|(&p, v)| (coarse.value(p) - v).abs()).fold(LEVELSET_TOL, f64::max);
    Ok(EffectiveHamiltonian::new(h.name(), Backend::Levelset, pgrid, values)?
        .with_error_estimate(err)
        .with_resolution("panels", LEVELSET_PANELS as f64))
}
