//! Hamilton-Jacobi equations `u_t + H(q, u_q) = 0`, `u(0) = f`.
//!
//! Two solvers share one output type. The variational solver takes the
//! unit-class min-max value of a discrete generating function of the evolved
//! graph of `df`, one fixed `q` at a time. The Lax-Oleinik solver iterates the
//! inf-convolution semigroup and needs `H` convex in `p`. On top of these sit
//! the homogenization experiment for `H(kq, p)` and the long-time slope.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{HamiltonianField, MomentumGrid, PeriodicFn, TorusGrid};
use crate::error::{Error, Result};
use crate::minmax::{birth, graded, Axis, ClassKind, SublevelComplex, DEFAULT_CELL_BUDGET};
use crate::weakkam::{
    alpha_curve, lagrangian, lax_oleinik_evolve, lax_oleinik_evolve_cover, require_convex, AlphaParams,
    LagrangianTable, Levelset, ValueFunction, LEVELSET_PANELS, WINDOW_FACTOR,
};

/// Largest step count of the variational solver.
pub const MAX_VARIATIONAL_STEPS: usize = 4;
/// Relative tolerance for "t is a multiple of tau".
const STEP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HjSolver {
    Variational,
    LaxOleinik,
}

/// Time slices `u(t_i, ·)` on torus nodes; `slices[0]` is the initial datum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HJSolution {
    pub qgrid: TorusGrid,
    pub times: Vec<f64>,
    pub slices: Vec<Vec<f64>>,
    pub hamiltonian: String,
    pub solver: HjSolver,
}

impl HJSolution {
    pub fn initial(&self) -> &[f64] {
        &self.slices[0]
    }

    pub fn last(&self) -> &[f64] {
        self.slices.last().expect("a solution holds at least the initial slice")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("a solution holds at least the initial slice")
    }

    /// The slice recorded at time `t`, if any.
    pub fn at_time(&self, t: f64) -> Option<&[f64]> {
        self.times.iter().position(|&s| (s - t).abs() <= STEP_TOL * (1.0 + t.abs())).map(|i| self.slices[i].as_slice())
    }

    /// `sup_q |u(T) − v(T)|` of the final slices.
    pub fn sup_distance(&self, other: &HJSolution) -> Result<f64> {
        if self.qgrid != other.qgrid {
            return Err(Error::GridMismatch(format!("{} vs {} nodes", self.qgrid.len(), other.qgrid.len())));
        }
        Ok(sup_diff(self.last(), other.last()))
    }

    /// CSV with columns `t,q,u`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "q", "u"])?;
        for (t, slice) in self.times.iter().zip(&self.slices) {
            for (i, u) in slice.iter().enumerate() {
                out.write_record([t.to_string(), self.qgrid.node(i).to_string(), u.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn step_count(t: f64, tau: f64) -> Result<usize> {
    if !(tau > 0.0) || !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("need tau > 0 and t >= 0, got t = {t}, tau = {tau}")));
    }
    let n = (t / tau).round();
    if (n * tau - t).abs() > STEP_TOL * (1.0 + t) {
        return Err(Error::InvalidInput(format!("t = {t} is not a multiple of tau = {tau}")));
    }
    Ok(n as usize)
}

/// `sup |f'|` over a fine sample of the circle.
fn slope_bound(f: &PeriodicFn) -> f64 {
    (0..1024).map(|i| f.deriv(i as f64 / 1024.0).abs()).fold(0.0, f64::max)
}

/// `sup |dH/dp|` over `h`'s torus nodes and `|p| <= pmax`.
fn velocity_bound(h: &HamiltonianField, pmax: f64) -> f64 {
    let n = 64;
    h.qgrid()
        .nodes()
        .iter()
        .flat_map(|&q| (0..=n).map(move |i| (q, -pmax + 2.0 * pmax * i as f64 / n as f64)))
        .map(|(q, p)| h.gradient(q, p).1.abs())
        .fold(0.0, f64::max)
}

/// Resolution of the variational solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    /// Displacement lattice per torus cell of the output grid (convex route).
    pub refine: usize,
    /// Core nodes per fiber axis (general route); odd.
    pub n_core: usize,
    /// Graded nodes beyond the core on each negative axis.
    pub n_extra: usize,
    pub cell_budget: usize,
    pub max_growth: usize,
}

impl Default for VariationalParams {
    fn default() -> Self {
        Self { refine: 8, n_core: 9, n_extra: 3, cell_budget: DEFAULT_CELL_BUDGET, max_growth: 4 }
    }
}

/// `u(t, q) = c(1(q), S_t)` where `S_t(q; b, p) = f(x_0) + Σ_j [p_j b_j − τ H(x_{j+1}, p_j)]`,
/// `x_steps = q`, `x_j = x_{j+1} − b_j` and `τ = t / steps`.
///
/// For `H` convex in `p` the momenta are maximized out in closed form, which
/// leaves `Σ τ L(x_{j+1}, b_j / τ)` on a cube of displacements. There the
/// unit class is born at the global minimum, found exactly by a backward
/// recursion over a displacement lattice. Otherwise the full fiber is sampled
/// in the coordinates `p_j = λ(s_j + t_j)`, `b_j = (s_j − t_j)/λ`, in which the
/// coupling is `s² − t²`.
pub fn solve_variational(
    h: &HamiltonianField,
    f: &PeriodicFn,
    qgrid: TorusGrid,
    t: f64,
    steps: usize,
    params: &VariationalParams,
) -> Result<HJSolution> {
    if steps == 0 || steps > MAX_VARIATIONAL_STEPS {
        return Err(Error::InvalidInput(format!("steps = {steps} is outside 1..={MAX_VARIATIONAL_STEPS}")));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("time must be nonnegative, got {t}")));
    }
    let f0 = f.sample(&qgrid);
    let mut out =
        HJSolution { qgrid, times: vec![0.0], slices: vec![f0], hamiltonian: h.name().to_string(), solver: HjSolver::Variational };
    if t == 0.0 {
        return Ok(out);
    }
    let tau = t / steps as f64;
    if h.is_convex_in_p() {
        let levels = variational_convex(h, f, qgrid, tau, steps, params)?;
        for (j, u) in levels.into_iter().enumerate() {
            out.times.push((j + 1) as f64 * tau);
            out.slices.push(u);
        }
    } else {
        let u = variational_general(h, f, qgrid, tau, steps, params)?;
        out.times.push(t);
        out.slices.push(u);
    }
    Ok(out)
}

fn variational_convex(
    h: &HamiltonianField,
    f: &PeriodicFn,
    qgrid: TorusGrid,
    tau: f64,
    steps: usize,
    params: &VariationalParams,
) -> Result<Vec<Vec<f64>>> {
    let lattice = TorusGrid::new(qgrid.len() * params.refine.max(1))?;
    let delta = lattice.spacing();
    let pmax = slope_bound(f) + steps as f64 * tau * h.sup_abs_dq();
    let mut vmax = (WINDOW_FACTOR * velocity_bound(h, pmax)).max(delta / tau);
    let u0 = f.sample(&lattice);
    for _ in 0..=params.max_growth {
        let w = ((vmax * tau / delta).ceil() as usize).max(1);
        let width = 2 * w + 1;
        let cost = (0..lattice.len() * width)
            .into_par_iter()
            .map(|i| {
                let m = (i % width) as f64 - w as f64;
                lagrangian(h, lattice.node(i / width), m * delta / tau).map(|l| tau * l)
            })
            .collect::<Result<Vec<_>>>()?;
        match lattice_recursion(&u0, &cost, w, steps) {
            Err(Error::WindowTooSmall { .. }) => vmax *= WINDOW_FACTOR,
            Err(e) => return Err(e),
            Ok(levels) => {
                let r = params.refine.max(1);
                return Ok(levels.into_iter().map(|u| u.into_iter().step_by(r).collect()).collect());
            }
        }
    }
    Err(Error::DomainTooSmall(format!("displacement window {vmax} still too small after growth")))
}

/// `V_{j+1}(x) = min_m V_j(x − m) + cost[x][m]` with the cost charged at the end point.
fn lattice_recursion(u0: &[f64], cost: &[f64], w: usize, steps: usize) -> Result<Vec<Vec<f64>>> {
    let n = u0.len();
    let width = 2 * w + 1;
    let mut levels = Vec::with_capacity(steps);
    let mut u = u0.to_vec();
    for _ in 0..steps {
        let next: Vec<(f64, bool)> = (0..n)
            .into_par_iter()
            .map(|x| {
                let mut best = (f64::INFINITY, 0isize);
                for j in 0..width {
                    let m = j as isize - w as isize;
                    let y = (x as isize - m).rem_euclid(n as isize) as usize;
                    let v = u[y] + cost[x * width + j];
                    if v < best.0 {
                        best = (v, m);
                    }
                }
                (best.0, best.1.unsigned_abs() == w && width < n)
            })
            .collect();
        if let Some(node) = next.iter().position(|&(_, hit)| hit) {
            return Err(Error::WindowTooSmall { node, window: w });
        }
        u = next.into_iter().map(|(v, _)| v).collect();
        levels.push(u.clone());
    }
    Ok(levels)
}

fn variational_general(
    h: &HamiltonianField,
    f: &PeriodicFn,
    qgrid: TorusGrid,
    tau: f64,
    steps: usize,
    params: &VariationalParams,
) -> Result<Vec<f64>> {
    if params.n_core < 3 || params.n_core % 2 == 0 {
        return Err(Error::InvalidInput(format!("core resolution must be odd and >= 3, got {}", params.n_core)));
    }
    let pmax = (slope_bound(f) + steps as f64 * tau * h.sup_abs_dq()).max(1e-3);
    let bmax = (tau * velocity_bound(h, pmax)).max(1e-6);
    let lambda = (pmax / bmax).sqrt();
    let core = (pmax * bmax).sqrt();
    let osc = 2.0 * f.sample(&TorusGrid::new(256)?).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let need = (osc + 2.0 * steps as f64 * (core * core + tau * h.sup_abs())).sqrt();
    let mut reach = (1.2 * need).max(1.5 * core);
    let s_axis = Axis::symmetric(core, params.n_core);
    for _ in 0..=params.max_growth {
        let t_axis = graded(core, reach, params.n_core, params.n_extra);
        let cells = ((2 * s_axis.len() - 1) * (2 * t_axis.len() - 1)).pow(steps as u32);
        if cells > params.cell_budget {
            return Err(Error::ResolutionBudget(format!(
                "{steps}-step fiber needs {cells} cells, budget is {}",
                params.cell_budget
            )));
        }
        let results = qgrid
            .nodes()
            .par_iter()
            .map(|&q| general_value(h, f, q, tau, steps, lambda, core, &s_axis, &t_axis, params.cell_budget))
            .collect::<Result<Vec<_>>>()?;
        if results.iter().all(|&(_, margin)| margin > 0.0) {
            return Ok(results.into_iter().map(|(v, _)| v).collect());
        }
        reach *= 2.0;
    }
    Err(Error::ResolutionBudget(format!("negative end still overlaps the core at reach {reach}")))
}

/// The unit-class value at `q` and the margin between the core and the negative end.
#[allow(clippy::too_many_arguments)]
fn general_value(
    h: &HamiltonianField,
    f: &PeriodicFn,
    q: f64,
    tau: f64,
    steps: usize,
    lambda: f64,
    core: f64,
    s_axis: &[f64],
    t_axis: &[f64],
    budget: usize,
) -> Result<(f64, f64)> {
    let mut axes = Vec::with_capacity(2 * steps);
    for _ in 0..steps {
        axes.push(Axis::interval(s_axis.to_vec()));
        axes.push(Axis::negative(t_axis.to_vec()));
    }
    let cx = SublevelComplex::from_fn(axes, |c| {
        let mut x = q;
        let mut g = 0.0;
        for j in (0..steps).rev() {
            let (s, t) = (c[2 * j], c[2 * j + 1]);
            let (p, b) = (lambda * (s + t), (s - t) / lambda);
            g += p * b - tau * h.value(x, p);
            x -= b;
        }
        g + f.eval(x)
    })?;
    let edge = core * (1.0 + 1e-12);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (v, &val) in cx.values().iter().enumerate() {
        if cx.vertex_in_negative_end(v) {
            hi = hi.max(val);
        } else if cx.vertex_index(v).iter().skip(1).step_by(2).all(|&i| t_axis[i].abs() <= edge) {
            lo = lo.min(val);
        }
    }
    let b = birth(&cx, ClassKind::Unit, budget)?;
    Ok((b.value, lo - hi))
}

/// Lax-Oleinik iteration from `f` with step `tau` up to `t`, recording every `record_every` steps.
pub fn solve_laxoleinik(
    h: &HamiltonianField,
    f: &PeriodicFn,
    qgrid: TorusGrid,
    t: f64,
    tau: f64,
    record_every: usize,
) -> Result<HJSolution> {
    require_convex(h)?;
    let steps = step_count(t, tau)?;
    let u0 = ValueFunction::new(qgrid, f.sample(&qgrid), 0.0)?;
    let mut out = HJSolution {
        qgrid,
        times: vec![0.0],
        slices: vec![u0.u.clone()],
        hamiltonian: h.name().to_string(),
        solver: HjSolver::LaxOleinik,
    };
    if steps == 0 {
        return Ok(out);
    }
    let pmax = slope_bound(f).max(h.pgrid().max_abs());
    let mut xi_max = (WINDOW_FACTOR * velocity_bound(h, pmax)).max(qgrid.spacing() / tau);
    for _ in 0..=4 {
        let table = LagrangianTable::for_step(h, qgrid, tau, xi_max)?;
        match lax_oleinik_evolve(&u0, &table, tau, steps, record_every) {
            Err(Error::WindowTooSmall { .. }) => xi_max *= WINDOW_FACTOR,
            Err(e) => return Err(e),
            Ok(states) => {
                for s in states {
                    out.times.push(s.t);
                    out.slices.push(s.u);
                }
                return Ok(out);
            }
        }
    }
    Err(Error::DomainTooSmall(format!("velocity window {xi_max} still too small after growth")))
}

/// Resolution of the long-time slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeParams {
    pub horizon: f64,
    pub tau: f64,
    pub n_q: usize,
}

impl Default for SlopeParams {
    fn default() -> Self {
        Self { horizon: 50.0, tau: 0.02, n_q: 256 }
    }
}

/// `(u(T, q0) − u(T/2, q0)) / (T/2)`, which tends to `−H̄(0)`; the bounded part of `u + t H̄(0)` cancels.
pub fn longtime_slope(h: &HamiltonianField, f: &PeriodicFn, q0: f64, params: &SlopeParams) -> Result<f64> {
    let steps = step_count(params.horizon, params.tau)?;
    if steps == 0 || steps % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "horizon {} must be an even positive multiple of tau {}",
            params.horizon, params.tau
        )));
    }
    let qgrid = TorusGrid::new(params.n_q)?;
    let sol = solve_laxoleinik(h, f, qgrid, params.horizon, params.tau, steps / 2)?;
    let (i, frac) = qgrid.locate(q0);
    let read = |u: &[f64]| u[i] + frac * (u[(i + 1) % u.len()] - u[i]);
    let half = sol.at_time(0.5 * params.horizon).expect("the midpoint is recorded");
    Ok((read(sol.last()) - read(half)) / (0.5 * params.horizon))
}

/// Resolution of the homogenization experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    /// Nodes per unit cell of the oscillation.
    pub n_cell: usize,
    /// Step of the unit-cell problem; the step for `H(kq, p)` is `tau / k`.
    pub tau: f64,
    /// Sampled times; each a multiple of `tau`.
    pub times: Vec<f64>,
    /// Largest cover grid `k n_cell`.
    pub max_nodes: usize,
    /// Samples of `H̄` on `[−P, P]` for the Legendre transform of the limit problem.
    pub hbar_samples: usize,
    /// Resolution of `H̄` when it is not available in closed form.
    pub alpha: AlphaParams,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            n_cell: 64,
            tau: 1.0 / 32.0,
            times: (1..=8).map(|i| 0.125 * i as f64).collect(),
            max_nodes: 1 << 15,
            hbar_samples: 2001,
            alpha: AlphaParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub k: usize,
    pub t: f64,
    pub error: f64,
}

/// Least-squares slope of `e_k(t) ≈ ε_k t` and its worst residual relative to `e_k(t_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonFit {
    pub k: usize,
    pub epsilon: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogenizationReport {
    pub hamiltonian: String,
    pub samples: Vec<ErrorSample>,
    pub fits: Vec<EpsilonFit>,
}

impl HomogenizationReport {
    pub fn epsilons(&self) -> Vec<f64> {
        self.fits.iter().map(|f| f.epsilon).collect()
    }

    pub fn errors(&self, k: usize) -> Vec<(f64, f64)> {
        self.samples.iter().filter(|s| s.k == k).map(|s| (s.t, s.error)).collect()
    }

    /// CSV with columns `k,t,e_k,epsilon_k`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "t", "e_k", "epsilon_k"])?;
        for s in &self.samples {
            let eps = self.fits.iter().find(|f| f.k == s.k).map_or(f64::NAN, |f| f.epsilon);
            out.write_record([s.k.to_string(), s.t.to_string(), s.error.to_string(), eps.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Fits `e ≈ ε t` through the origin.
pub fn fit_linear(k: usize, samples: &[(f64, f64)]) -> EpsilonFit {
    let stt: f64 = samples.iter().map(|(t, _)| t * t).sum();
    let set: f64 = samples.iter().map(|(t, e)| t * e).sum();
    let epsilon = if stt > 0.0 { set / stt } else { 0.0 };
    let last = samples.iter().copied().fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a }).1;
    let worst = samples.iter().map(|(t, e)| (e - epsilon * t).abs()).fold(0.0, f64::max);
    let residual = if last > 0.0 { worst / last } else if worst == 0.0 { 0.0 } else { f64::INFINITY };
    EpsilonFit { k, epsilon, residual }
}

/// Samples of `H̄` on `[−pmax, pmax]`: closed form for `p`-only and mechanical input, long-time averages otherwise.
fn hbar_samples(h: &HamiltonianField, pmax: f64, n: usize, alpha: &AlphaParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let pg = MomentumGrid::new(-pmax, pmax, n.max(2))?;
    let ps = pg.nodes();
    if h.is_p_only() {
        let hs = ps.iter().map(|&p| h.value(0.0, p)).collect();
        return Ok((ps, hs));
    }
    match Levelset::new(h, LEVELSET_PANELS) {
        Ok(ls) => {
            let hs = ps.par_iter().map(|&p| ls.value(p)).collect();
            Ok((ps, hs))
        }
        Err(Error::NotMechanical(_)) => {
            let coarse = MomentumGrid::new(-pmax, pmax, 4 * pmax.ceil() as usize + 1)?;
            let curve = alpha_curve(h, coarse, alpha)?;
            let hs = ps.iter().map(|&p| curve.value(p)).collect();
            Ok((ps, hs))
        }
        Err(e) => Err(e),
    }
}

/// Solves `u_t + H(kq, u_q) = 0`, `u(0) = f`, for each `k` and compares with the
/// limit problem `ū_t + H̄(ū_q) = 0`.
///
/// `u_k(t, q) = U(kt, kq) / k`, where `U` solves the unit-cell equation on the
/// `k`-fold cover of the torus with `U(0, Q) = k f(Q/k)`. The limit problem is
/// solved on the same grid and step as `u_k`, with the Lagrangian of `H̄`.
/// `e_k(t) = sup_q |u_k(t) − ū(t)|` over the unit-cell nodes `i / n_cell`.
pub fn homogenization_experiment(
    h: &HamiltonianField,
    f: &PeriodicFn,
    ks: &[usize],
    params: &ExperimentParams,
) -> Result<HomogenizationReport> {
    require_convex(h)?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidInput("k list must be nonempty and positive".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k * params.n_cell > params.max_nodes) {
        return Err(Error::ResolutionBudget(format!(
            "k = {k} needs {} nodes, cap is {}",
            k * params.n_cell,
            params.max_nodes
        )));
    }
    if params.times.is_empty() {
        return Err(Error::InvalidInput("no sample times".into()));
    }
    let steps: Vec<usize> = params.times.iter().map(|&t| step_count(t, params.tau)).collect::<Result<_>>()?;
    let cell = TorusGrid::new(params.n_cell)?;
    let pmax_h = slope_bound(f).max(h.pgrid().max_abs());
    let xi0 = (WINDOW_FACTOR * velocity_bound(h, pmax_h)).max(cell.spacing() / params.tau);
    let (ps, hs) = hbar_samples(h, xi0 * WINDOW_FACTOR.powi(4) + pmax_h, params.hbar_samples, &params.alpha)?;

    let per_k = ks
        .par_iter()
        .map(|&k| -> Result<Vec<ErrorSample>> {
            let cover = TorusGrid::new(k * params.n_cell)?;
            let u0: Vec<f64> = (0..cover.len()).map(|j| k as f64 * f.eval(j as f64 / (k * params.n_cell) as f64)).collect();
            let bar0 = f.sample(&cover);
            let total = k * steps.iter().copied().max().unwrap_or(0);
            let mut xi_max = xi0;
            for _ in 0..=4 {
                let table = LagrangianTable::for_step(h, cell, params.tau, xi_max)?;
                let dv = cell.spacing() / params.tau;
                let half = ((xi_max / dv).ceil() as usize).max(1);
                let bar_table = LagrangianTable::from_samples(cover, dv, half, &ps, &hs)?;
                let cell_run = lax_oleinik_evolve_cover(&u0, k, &table, params.tau, total, 1);
                let bar_run = lax_oleinik_evolve_cover(&bar0, 1, &bar_table, params.tau / k as f64, total, 1);
                match (cell_run, bar_run) {
                    (Err(Error::WindowTooSmall { .. }), _) | (_, Err(Error::WindowTooSmall { .. })) => xi_max *= WINDOW_FACTOR,
                    (Err(e), _) | (_, Err(e)) => return Err(e),
                    (Ok(us), Ok(bars)) => {
                        return Ok(params
                            .times
                            .iter()
                            .zip(&steps)
                            .map(|(&t, &s)| {
                                let (uk, bar) = (&us[k * s - 1], &bars[k * s - 1]);
                                let error = (0..params.n_cell)
                                    .map(|i| (uk[k * i] / k as f64 - bar[k * i]).abs())
                                    .fold(0.0, f64::max);
                                ErrorSample { k, t, error }
                            })
                            .collect());
                    }
                }
            }
            Err(Error::DomainTooSmall(format!("velocity window {xi_max} still too small for k = {k}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let samples: Vec<ErrorSample> = per_k.into_iter().flatten().collect();
    let fits = ks
        .iter()
        .map(|&k| {
            let pts: Vec<(f64, f64)> = samples.iter().filter(|s| s.k == k).map(|s| (s.t, s.error)).collect();
            fit_linear(k, &pts)
        })
        .collect();
    Ok(HomogenizationReport { hamiltonian: h.name().to_string(), samples, fits })
}
