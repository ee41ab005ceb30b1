//! Min-max critical values of discrete actions by relative sublevel-set persistence.
//!
//! A slice `F_{k,y}` of the normalized action `−F_k/τ` is sampled on a cubical
//! grid over the circle times a fiber box. The unit class `{pt} × D⁻` and the
//! fundamental class `T¹ × D⁻` of the grid relative to its negative end are
//! born at the values `c_minus` and `c_plus`. Three routes produce the slice:
//!
//! * p-only Hamiltonians reduce exactly to `h(y)`;
//! * Hamiltonians convex (or concave) in `p` have their free momenta optimized
//!   out by a Legendre transform, leaving a coercive function whose min-max
//!   values are a minimum and a loop min-max;
//! * anything else is sampled in full (feasible for small `k`).

mod complex;
mod general;
mod oracle;
mod reduced;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use complex::{birth, c_value, Axis, Birth, ClassKind, SublevelComplex, DEFAULT_CELL_BUDGET};
pub use general::{graded, GeneralLayout};
pub use oracle::{brute_cycle_oracle, ORACLE_CELL_LIMIT};
pub use reduced::{legendre_value, Curvature, ReducedGrid};

use crate::domain::{HamiltonianField, MomentumGrid};
use crate::error::{Error, Result};
use crate::genfun::{one_step_gf, ActionMode, DiscreteAction};
use crate::homog::{Backend, EffectiveHamiltonian};

/// Default time step of the one-step generating function used by min-max backends.
pub const DEFAULT_TAU: f64 = 0.2;

/// Resolution controls of the min-max computations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinmaxParams {
    /// Periodic nodes in `x`; default `max(32, 16 m)` with `m` the rescaling factor.
    pub n_x: Option<usize>,
    /// Nodes per fiber axis (odd).
    pub n_fiber: usize,
    /// Graded nodes added on each side of a negative axis (general route).
    pub n_extra: usize,
    /// Bound on the velocities `b_j m/τ` sampled by the reduced route; default `1.5 sup|∂H/∂p|`.
    pub velocity_bound: Option<f64>,
    pub cell_budget: usize,
    /// Box enlargements allowed when an extremizer sits on the box boundary.
    pub max_growth: usize,
}

impl Default for MinmaxParams {
    fn default() -> Self {
        Self { n_x: None, n_fiber: 11, n_extra: 3, velocity_bound: None, cell_budget: DEFAULT_CELL_BUDGET, max_growth: 4 }
    }
}

/// `(c_minus, c_plus, gamma)` of one slice or map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralInvariants {
    pub c_minus: f64,
    pub c_plus: f64,
    pub gamma: f64,
}

impl SpectralInvariants {
    pub fn new(c_minus: f64, c_plus: f64) -> Self {
        Self { c_minus, c_plus, gamma: c_plus - c_minus }
    }
}

/// Invariants of one slice plus the local value oscillation at the attaining vertices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceResult {
    pub invariants: SpectralInvariants,
    /// Largest difference between an attaining vertex and its grid neighbors (normalized units).
    pub slack: f64,
}

/// Which reduction a solver uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    POnly,
    Convex,
    Concave,
    General,
}

enum Prepared {
    POnly,
    Reduced(ReducedGrid),
    General(GeneralLayout),
}

/// Slice evaluator for one discrete action; the `y`-independent work is done once.
pub struct SpectralSolver {
    action: DiscreteAction,
    params: MinmaxParams,
    prepared: Prepared,
    route: Route,
}

impl SpectralSolver {
    pub fn new(action: &DiscreteAction, params: &MinmaxParams) -> Result<Self> {
        if params.n_fiber < 3 || params.n_fiber % 2 == 0 {
            return Err(Error::InvalidInput(format!("fiber resolution must be odd and >= 3, got {}", params.n_fiber)));
        }
        let h = action.step().field();
        let (prepared, route) = if h.is_p_only() {
            (Prepared::POnly, Route::POnly)
        } else {
            let curvature = if h.is_convex_in_p() {
                Some(Curvature::Convex)
            } else if h.scaled(-1.0, "negated")?.is_convex_in_p() {
                Some(Curvature::Concave)
            } else {
                None
            };
            let reduced = match curvature {
                Some(c) => match Self::reduced_grid(action, params, c, 1.0) {
                    Ok(g) => Some((Prepared::Reduced(g), if c == Curvature::Convex { Route::Convex } else { Route::Concave })),
                    Err(Error::NotCoercive(_)) => None,
                    Err(e) => return Err(e),
                },
                None => None,
            };
            match reduced {
                Some(r) => r,
                None => {
                    let layout = GeneralLayout::new(action, Self::n_x(action, params), params.n_fiber, params.n_extra)?;
                    if layout.cell_count(action.k()) > params.cell_budget {
                        return Err(Error::ResolutionBudget(format!(
                            "general slice for k = {} needs {} cells, budget is {}",
                            action.k(),
                            layout.cell_count(action.k()),
                            params.cell_budget
                        )));
                    }
                    (Prepared::General(layout), Route::General)
                }
            }
        };
        Ok(Self { action: action.clone(), params: params.clone(), prepared, route })
    }

    fn scale(action: &DiscreteAction) -> f64 {
        match action.mode() {
            ActionMode::Rescaled => action.k() as f64,
            ActionMode::Plain => 1.0,
        }
    }

    fn n_x(action: &DiscreteAction, params: &MinmaxParams) -> usize {
        params.n_x.unwrap_or_else(|| 32.max(16 * Self::scale(action) as usize))
    }

    fn reduced_grid(action: &DiscreteAction, params: &MinmaxParams, c: Curvature, growth: f64) -> Result<ReducedGrid> {
        let h = action.step().field();
        let m = Self::scale(action);
        let vmax = params.velocity_bound.unwrap_or_else(|| 1.5 * h.sup_abs_dp()).max(1e-9);
        let b_max = growth * action.tau() / m * vmax;
        ReducedGrid::new(h, c, action.k(), m, action.tau(), Self::n_x(action, params), params.n_fiber, b_max)
    }

    pub fn route(&self) -> Route {
        self.route
    }

    pub fn action(&self) -> &DiscreteAction {
        &self.action
    }

    pub fn at(&self, y: f64) -> Result<SpectralInvariants> {
        self.at_detailed(y).map(|r| r.invariants)
    }

    pub fn at_detailed(&self, y: f64) -> Result<SliceResult> {
        match &self.prepared {
            Prepared::POnly => {
                let h = self.action.step().field().value(0.0, y);
                let v = match self.action.mode() {
                    ActionMode::Rescaled => h,
                    ActionMode::Plain => self.action.k() as f64 * h,
                };
                Ok(SliceResult { invariants: SpectralInvariants::new(v, v), slack: 0.0 })
            }
            Prepared::Reduced(grid) => self.reduced_at(grid, y),
            Prepared::General(layout) => self.general_at(layout, y),
        }
    }

    fn reduced_at(&self, grid: &ReducedGrid, y: f64) -> Result<SliceResult> {
        let curvature = match self.route {
            Route::Concave => Curvature::Concave,
            _ => Curvature::Convex,
        };
        let mut owned;
        let mut g = grid;
        for attempt in 0..=self.params.max_growth {
            let (lo, hi, cx) = g.invariants(y)?;
            let on_edge = cx.vertex_on_box_boundary(lo.vertex) || cx.vertex_on_box_boundary(hi.vertex);
            if !on_edge {
                let scale = g.normalization().abs();
                let slack = scale * local_oscillation(&cx, lo.vertex).max(local_oscillation(&cx, hi.vertex));
                return Ok(SliceResult { invariants: SpectralInvariants::new(lo.value, hi.value), slack });
            }
            if attempt == self.params.max_growth {
                break;
            }
            owned = Self::reduced_grid(&self.action, &self.params, curvature, 1.5f64.powi(attempt as i32 + 1))?;
            g = &owned;
        }
        Err(Error::DomainTooSmall(format!("min-max extremizer stays on the fiber box boundary at y = {y}")))
    }

    fn general_at(&self, layout: &GeneralLayout, y: f64) -> Result<SliceResult> {
        let mut layout = layout.clone();
        for _ in 0..=self.params.max_growth {
            if layout.cell_count(self.action.k()) > self.params.cell_budget {
                break;
            }
            let (cx, margin) = layout.complex(&self.action, y)?;
            if margin > 0.0 {
                let lo = birth(&cx, ClassKind::Unit, self.params.cell_budget)?;
                let hi = birth(&cx, ClassKind::Fundamental, self.params.cell_budget)?;
                let slack = local_oscillation(&cx, lo.vertex).max(local_oscillation(&cx, hi.vertex));
                return Ok(SliceResult { invariants: SpectralInvariants::new(lo.value, hi.value), slack });
            }
            layout = layout.extended(self.params.n_fiber, self.params.n_extra);
        }
        Err(Error::ResolutionBudget(format!("negative end of the slice at y = {y} cannot be separated within budget")))
    }
}

/// Largest `|value(v) − value(w)|` over grid neighbors `w` of vertex `v`.
fn local_oscillation(cx: &SublevelComplex, v: usize) -> f64 {
    let idx = cx.vertex_index(v);
    let values = cx.values();
    let mut stride = 1;
    let mut strides = vec![0; idx.len()];
    for i in (0..idx.len()).rev() {
        strides[i] = stride;
        stride *= cx.axes()[i].len();
    }
    let mut m = 0.0_f64;
    for (i, axis) in cx.axes().iter().enumerate() {
        let n = axis.len();
        let mut nb = Vec::with_capacity(2);
        if idx[i] + 1 < n {
            nb.push(v + strides[i]);
        } else if axis.periodic {
            nb.push(v - idx[i] * strides[i]);
        }
        if idx[i] > 0 {
            nb.push(v - strides[i]);
        } else if axis.periodic {
            nb.push(v + (n - 1) * strides[i]);
        }
        for w in nb {
            m = m.max((values[v] - values[w]).abs());
        }
    }
    m
}

/// Invariants of the slice `F_{k,y}` with default resolution.
pub fn spectral_invariants(f: &DiscreteAction, y: f64) -> Result<SpectralInvariants> {
    SpectralSolver::new(f, &MinmaxParams::default())?.at(y)
}

/// Invariants of the time-`τ` map of a compactly supported Hamiltonian (`k = 1`),
/// computed on the torus obtained by gluing the two ends of the momentum grid.
pub fn map_spectral_invariants(f: &DiscreteAction, params: &MinmaxParams) -> Result<SpectralInvariants> {
    let h = f.step().field();
    if f.k() != 1 {
        return Err(Error::InvalidInput("map invariants are computed for k = 1 only".into()));
    }
    if !h.is_compactly_supported() {
        return Err(Error::InvalidInput(format!("field '{}' is not compactly supported", h.name())));
    }
    let pg = h.pgrid();
    let ys: Vec<f64> = pg.nodes()[..pg.len() - 1].to_vec();
    let n_x = params.n_x.unwrap_or(32);
    let axes = vec![Axis::periodic(n_x), Axis { coords: ys, periodic: true, negative: false }];
    let cx = SublevelComplex::from_fn(axes, |c| f.normalized(c[0], c[1], &[]))?;
    let lo = birth(&cx, ClassKind::Unit, params.cell_budget)?;
    let hi = birth(&cx, ClassKind::Fundamental, params.cell_budget)?;
    Ok(SpectralInvariants::new(lo.value, hi.value))
}

/// `h_k(y) = c_plus(F_{k,y})` over a momentum grid, with `c_minus` recorded alongside.
pub fn hk_curve(f: &DiscreteAction, pgrid: MomentumGrid, params: &MinmaxParams) -> Result<EffectiveHamiltonian> {
    let solver = SpectralSolver::new(f, params)?;
    let results: Vec<SliceResult> =
        pgrid.nodes().par_iter().map(|&y| solver.at_detailed(y)).collect::<Result<Vec<_>>>()?;
    let c_minus: Vec<f64> = results.iter().map(|r| r.invariants.c_minus).collect();
    let c_plus: Vec<f64> = results.iter().map(|r| r.invariants.c_plus).collect();
    let gamma = results.iter().fold(0.0_f64, |m, r| m.max(r.invariants.gamma));
    let slack = results.iter().fold(0.0_f64, |m, r| m.max(r.slack));
    let h = f.step().field();
    let mut out = EffectiveHamiltonian::new(h.name(), Backend::Minmax, pgrid, c_plus.clone())?
        .with_error_estimate(gamma + slack)
        .with_resolution("n_x", SpectralSolver::n_x(f, params) as f64)
        .with_resolution("n_fiber", params.n_fiber as f64);
    if let Some(v) = params.velocity_bound {
        out = out.with_resolution("velocity_bound", v);
    }
    out.c_minus = Some(c_minus);
    out.c_plus = Some(c_plus);
    out.k = Some(f.k());
    out.tau = Some(f.tau());
    Ok(out)
}

/// `(1/k) c±(φᵏ)` for `k = 1..k_max`, with a Richardson estimate of the limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpmSequence {
    pub k: Vec<usize>,
    pub c_plus_over_k: Vec<f64>,
    pub c_minus_over_k: Vec<f64>,
    /// Richardson extrapolation in `1/k` from `k_max/2` and `k_max`.
    pub extrapolated_plus: f64,
    pub extrapolated_minus: f64,
    /// `(sup_y γ + sup_y slack) / k_max` at the final iterate.
    pub error_estimate: f64,
    /// Momentum window over which the slice values were taken.
    pub window: (f64, f64),
    pub tau: f64,
}

impl CpmSequence {
    /// Values at `k = 1, 2, 4, ...`, the subsequence along which subadditivity forces monotonicity.
    pub fn dyadic_plus(&self) -> Vec<(usize, f64)> {
        self.k.iter().zip(&self.c_plus_over_k).filter(|(k, _)| k.is_power_of_two()).map(|(&k, &v)| (k, v)).collect()
    }
}

/// Iterates of the unrescaled k-fold action. `c₊(φᵏ)` is read as the largest
/// fundamental slice value over the momentum window and `c₋(φᵏ)` as the smallest
/// unit slice value.
pub fn c_pm_iterates(
    h: &HamiltonianField,
    k_max: usize,
    tau: f64,
    window: Option<(f64, f64)>,
    params: &MinmaxParams,
) -> Result<CpmSequence> {
    if k_max == 0 {
        return Err(Error::InvalidInput("k_max must be at least 1".into()));
    }
    if k_max > 4 {
        return Err(Error::ResolutionBudget(format!("k_max = {k_max} exceeds the fiber budget (k <= 4)")));
    }
    let pg = h.pgrid();
    let (lo, hi) = window.unwrap_or((pg.p_min(), pg.p_max()));
    let ys: Vec<f64> = pg.nodes().into_iter().filter(|&p| p >= lo - 1e-12 && p <= hi + 1e-12).collect();
    if ys.is_empty() {
        return Err(Error::InvalidInput(format!("momentum window [{lo}, {hi}] contains no grid node")));
    }
    let step = one_step_gf(h, tau)?;
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    let mut error_estimate = 0.0;
    for k in 1..=k_max {
        let f = DiscreteAction::new(&step, k, ActionMode::Plain)?;
        let solver = SpectralSolver::new(&f, params)?;
        let res: Vec<SliceResult> = ys.par_iter().map(|&y| solver.at_detailed(y)).collect::<Result<Vec<_>>>()?;
        let kf = k as f64;
        plus.push(res.iter().map(|s| s.invariants.c_plus).fold(f64::NEG_INFINITY, f64::max) / kf);
        minus.push(res.iter().map(|s| s.invariants.c_minus).fold(f64::INFINITY, f64::min) / kf);
        let gamma = res.iter().map(|s| s.invariants.gamma).fold(0.0, f64::max);
        let slack = res.iter().map(|s| s.slack).fold(0.0, f64::max);
        error_estimate = (gamma + slack) / kf;
    }
    let richardson = |v: &[f64]| {
        let k2 = v.len();
        let k1 = k2 / 2;
        if k1 == 0 {
            return v[0];
        }
        let (a, b) = (k1 as f64, k2 as f64);
        (b * v[k2 - 1] - a * v[k1 - 1]) / (b - a)
    };
    Ok(CpmSequence {
        k: (1..=k_max).collect(),
        extrapolated_plus: richardson(&plus),
        extrapolated_minus: richardson(&minus),
        c_plus_over_k: plus,
        c_minus_over_k: minus,
        error_estimate,
        window: (lo, hi),
        tau,
    })
}
