//! Generating functions of near-identity maps, their composition, and the k-fold
//! discrete action.
//!
//! Convention: a function `S(Q, p; ξ)` generates the map
//! `(Q + ∂S/∂p, p) ↦ (Q, p + ∂S/∂Q)` restricted to the fiber-critical set
//! `∂S/∂ξ = 0`. All pairings are taken on lifted (real) angle representatives;
//! the angle is identified modulo 1 only inside the one-step function.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{HamiltonianField, MomentumGrid, TorusGrid};
use crate::error::{Error, Result};

/// Bound on `τ · sup|∂²H/∂Q∂p|` below which the one-step map is near the identity.
pub const NEAR_IDENTITY_LIMIT: f64 = 0.5;

/// Generating data with a one-dimensional base and an arbitrary fiber.
pub trait GeneratingData: Send + Sync {
    fn fiber_dim(&self) -> usize;
    fn grids(&self) -> (TorusGrid, MomentumGrid);
    fn tau(&self) -> f64;
    fn eval(&self, q: f64, p: f64, xi: &[f64]) -> f64;
    /// `(∂/∂q, ∂/∂p, ∂/∂ξ)`.
    fn gradient(&self, q: f64, p: f64, xi: &[f64]) -> (f64, f64, Vec<f64>);
}

/// `S(Q,p) = −τ H(Q,p)`, the generating function of the symplectic Euler step
/// `Q = q + τ H_p(Q,p)`, `P = p − τ H_Q(Q,p)`.
#[derive(Clone, Debug)]
pub struct OneStepGF {
    field: HamiltonianField,
    tau: f64,
    local_error_coefficient: f64,
}

/// Builds the one-step generating function of `h` with step `tau`.
pub fn one_step_gf(h: &HamiltonianField, tau: f64) -> Result<OneStepGF> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("step must be positive, got {tau}")));
    }
    let hqp = h.sup_abs_mixed();
    let product = tau * hqp;
    if product >= NEAR_IDENTITY_LIMIT {
        return Err(Error::StepTooLarge { product });
    }
    let (hp, hq) = (h.sup_abs_dp(), h.sup_abs_dq());
    let (hpp, hqq) = (h.sup_abs_dpp(), h.sup_abs_dqq());
    // Second-order Taylor mismatch between the Euler step and the exact flow, per unit tau^2.
    let c = 0.5 * (hqp * hp + hpp * hq) + 0.5 * (hqq * hp + hqp * hq);
    Ok(OneStepGF { field: h.clone(), tau, local_error_coefficient: c })
}

impl OneStepGF {
    pub fn field(&self) -> &HamiltonianField {
        &self.field
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `C` such that one generated step differs from the exact time-`τ` flow by about `C τ²`.
    pub fn local_error_coefficient(&self) -> f64 {
        self.local_error_coefficient
    }

    pub fn error_bound(&self) -> f64 {
        self.local_error_coefficient * self.tau * self.tau
    }

    pub fn value(&self, q: f64, p: f64) -> f64 {
        -self.tau * self.field.value(q, p)
    }

    /// `(∂S/∂Q, ∂S/∂p)`.
    pub fn gradient(&self, q: f64, p: f64) -> (f64, f64) {
        let (a, b) = self.field.gradient(q, p);
        (-self.tau * a, -self.tau * b)
    }

    /// The generated map on lifted coordinates.
    pub fn map(&self, q: f64, p: f64) -> (f64, f64) {
        // Contraction with rate tau * sup|H_Qp| < 1/2.
        let mut big_q = q + self.tau * self.field.gradient(q, p).1;
        for _ in 0..200 {
            let next = q + self.tau * self.field.gradient(big_q, p).1;
            let done = (next - big_q).abs() <= 1e-15 * (1.0 + next.abs());
            big_q = next;
            if done {
                break;
            }
        }
        (big_q, p - self.tau * self.field.gradient(big_q, p).0)
    }
}

impl GeneratingData for OneStepGF {
    fn fiber_dim(&self) -> usize {
        0
    }

    fn grids(&self) -> (TorusGrid, MomentumGrid) {
        (self.field.qgrid(), self.field.pgrid())
    }

    fn tau(&self) -> f64 {
        self.tau
    }

    fn eval(&self, q: f64, p: f64, _xi: &[f64]) -> f64 {
        self.value(q, p)
    }

    fn gradient(&self, q: f64, p: f64, _xi: &[f64]) -> (f64, f64, Vec<f64>) {
        let (a, b) = OneStepGF::gradient(self, q, p);
        (a, b, Vec::new())
    }
}

/// `S(q₁,p₂; ξ₁, ξ₂, q₂, p₁) = S₁(q₁,p₁;ξ₁) + S₂(q₂,p₂;ξ₂) + (p₁ − p₂)(q₁ − q₂)`,
/// generating the composition of the first map after the second.
#[derive(Clone)]
pub struct Composite {
    first: Arc<dyn GeneratingData>,
    second: Arc<dyn GeneratingData>,
}

/// Chekanov composition of two generating data on shared grids.
pub fn compose_gf(first: Arc<dyn GeneratingData>, second: Arc<dyn GeneratingData>) -> Result<Composite> {
    if first.grids() != second.grids() {
        return Err(Error::GridMismatch("composed generating functions live on different grids".into()));
    }
    Ok(Composite { first, second })
}

impl Composite {
    /// Splits a composite fiber vector into `(ξ₁, ξ₂, q₂, p₁)`.
    fn split<'a>(&self, xi: &'a [f64]) -> (&'a [f64], &'a [f64], f64, f64) {
        let d1 = self.first.fiber_dim();
        let d2 = self.second.fiber_dim();
        (&xi[..d1], &xi[d1..d1 + d2], xi[d1 + d2], xi[d1 + d2 + 1])
    }
}

impl GeneratingData for Composite {
    fn fiber_dim(&self) -> usize {
        self.first.fiber_dim() + self.second.fiber_dim() + 2
    }

    fn grids(&self) -> (TorusGrid, MomentumGrid) {
        self.first.grids()
    }

    fn tau(&self) -> f64 {
        self.first.tau() + self.second.tau()
    }

    fn eval(&self, q1: f64, p2: f64, xi: &[f64]) -> f64 {
        let (x1, x2, q2, p1) = self.split(xi);
        self.first.eval(q1, p1, x1) + self.second.eval(q2, p2, x2) + (p1 - p2) * (q1 - q2)
    }

    fn gradient(&self, q1: f64, p2: f64, xi: &[f64]) -> (f64, f64, Vec<f64>) {
        let (x1, x2, q2, p1) = self.split(xi);
        let (a_q, a_p, a_xi) = self.first.gradient(q1, p1, x1);
        let (b_q, b_p, b_xi) = self.second.gradient(q2, p2, x2);
        let mut d = a_xi;
        d.extend(b_xi);
        d.push(b_q - (p1 - p2));
        d.push(a_p + (q1 - q2));
        (a_q + (p1 - p2), b_p - (q1 - q2), d)
    }
}

/// Whether the k-fold action is conjugated by `(q, p) ↦ (kq, p)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// `(1/k) Σ S(k q_j, p_j) + coupling`: generates the k-th iterate of the rescaled map.
    Rescaled,
    /// `Σ S(q_j, p_j) + coupling`: generates the k-th iterate itself.
    Plain,
}

/// Gradient of a discrete action in `(x, y, ξ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionGradient {
    pub dx: f64,
    pub dy: f64,
    pub dxi: Vec<f64>,
}

/// The k-fold discrete action
/// `F_k(x, y; ξ) = Σ_j s_j(q_j, p_j) + Σ_{j<k} (p_j − y)(q_j − q_{j+1})`
/// with `x = q₁`, `y = p_k` and fiber `ξ = (p₁, q₂, p₂, q₃, …, p_{k−1}, q_k)`.
#[derive(Clone, Debug)]
pub struct DiscreteAction {
    step: Arc<OneStepGF>,
    k: usize,
    mode: ActionMode,
}

/// Rescaled k-fold action of `step`.
pub fn build_fk(step: &OneStepGF, k: usize) -> Result<DiscreteAction> {
    DiscreteAction::new(step, k, ActionMode::Rescaled)
}

impl DiscreteAction {
    pub fn new(step: &OneStepGF, k: usize, mode: ActionMode) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("the discrete action needs k >= 1".into()));
        }
        Ok(Self { step: Arc::new(step.clone()), k, mode })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mode(&self) -> ActionMode {
        self.mode
    }

    pub fn step(&self) -> &OneStepGF {
        &self.step
    }

    pub fn tau(&self) -> f64 {
        self.step.tau
    }

    pub fn fiber_dim(&self) -> usize {
        2 * (self.k - 1)
    }

    /// `(q_j, p_j)` for `j = 1..k`.
    pub fn points(&self, x: f64, y: f64, xi: &[f64]) -> Vec<(f64, f64)> {
        assert_eq!(xi.len(), self.fiber_dim(), "fiber vector has the wrong length");
        let mut out = Vec::with_capacity(self.k);
        let mut q = x;
        for j in 0..self.k {
            let p = if j + 1 == self.k { y } else { xi[2 * j] };
            out.push((q, p));
            if j + 1 < self.k {
                q = xi[2 * j + 1];
            }
        }
        out
    }

    fn scale(&self) -> f64 {
        match self.mode {
            ActionMode::Rescaled => self.k as f64,
            ActionMode::Plain => 1.0,
        }
    }

    /// The step terms `Σ_j s_j(q_j, p_j)`.
    pub fn step_sum(&self, x: f64, y: f64, xi: &[f64]) -> f64 {
        let m = self.scale();
        self.points(x, y, xi).iter().map(|&(q, p)| self.step.value(m * q, p) / m).sum()
    }

    /// The bilinear coupling `Σ_{j<k} (p_j − y)(q_j − q_{j+1})`.
    pub fn quadratic_part(&self, x: f64, y: f64, xi: &[f64]) -> f64 {
        let pts = self.points(x, y, xi);
        pts.windows(2).map(|w| (w[0].1 - y) * (w[0].0 - w[1].0)).sum()
    }

    pub fn eval(&self, x: f64, y: f64, xi: &[f64]) -> f64 {
        self.step_sum(x, y, xi) + self.quadratic_part(x, y, xi)
    }

    /// `−F_k / τ`: the action in units of energy, whose critical values are Hamiltonian levels.
    pub fn normalized(&self, x: f64, y: f64, xi: &[f64]) -> f64 {
        -self.eval(x, y, xi) / self.step.tau
    }

    pub fn gradient(&self, x: f64, y: f64, xi: &[f64]) -> ActionGradient {
        let m = self.scale();
        let pts = self.points(x, y, xi);
        let k = self.k;
        // Step-term partials at every (q_j, p_j).
        let grads: Vec<(f64, f64)> = pts
            .iter()
            .map(|&(q, p)| {
                let (a, b) = self.step.gradient(m * q, p);
                (a, b / m)
            })
            .collect();
        let mut dq = vec![0.0; k];
        let mut dp = vec![0.0; k];
        for j in 0..k {
            dq[j] = grads[j].0;
            dp[j] = grads[j].1;
        }
        let mut dy = dp[k - 1];
        for j in 0..k - 1 {
            let (qj, pj) = pts[j];
            let qn = pts[j + 1].0;
            dp[j] += qj - qn;
            dq[j] += pj - y;
            dq[j + 1] -= pj - y;
            dy -= qj - qn;
        }
        let mut dxi = Vec::with_capacity(self.fiber_dim());
        for j in 0..k - 1 {
            dxi.push(dp[j]);
            dxi.push(dq[j + 1]);
        }
        ActionGradient { dx: dq[0], dy, dxi }
    }

    /// Fiber point critical for the coupling alone: `p_j = y`, `q_j = x`.
    pub fn coupling_center(&self, x: f64, y: f64) -> Vec<f64> {
        (0..self.k - 1).flat_map(|_| [y, x]).collect()
    }

    /// CSV dump of `−F_k/τ` over `x ∈ [0,1)` and one fiber axis offset from `xi`.
    #[allow(clippy::too_many_arguments)]
    pub fn write_slice_csv<W: Write>(
        &self,
        y: f64,
        xi: &[f64],
        axis: usize,
        half_width: f64,
        n_x: usize,
        n_axis: usize,
        w: W,
    ) -> Result<()> {
        if axis >= self.fiber_dim() || n_x == 0 || n_axis < 2 {
            return Err(Error::InvalidInput(format!("bad slice request: axis {axis}, {n_x} x {n_axis} nodes")));
        }
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["x", "offset", "value"])?;
        let mut v = xi.to_vec();
        for i in 0..n_x {
            let x = i as f64 / n_x as f64;
            for j in 0..n_axis {
                let t = -half_width + 2.0 * half_width * j as f64 / (n_axis - 1) as f64;
                v[axis] = xi[axis] + t;
                cw.write_record(&[x.to_string(), t.to_string(), self.normalized(x, y, &v).to_string()])?;
            }
        }
        cw.flush()?;
        Ok(())
    }
}

impl GeneratingData for DiscreteAction {
    fn fiber_dim(&self) -> usize {
        DiscreteAction::fiber_dim(self)
    }

    fn grids(&self) -> (TorusGrid, MomentumGrid) {
        self.step.grids()
    }

    fn tau(&self) -> f64 {
        self.k as f64 * self.step.tau
    }

    fn eval(&self, q: f64, p: f64, xi: &[f64]) -> f64 {
        DiscreteAction::eval(self, q, p, xi)
    }

    fn gradient(&self, q: f64, p: f64, xi: &[f64]) -> (f64, f64, Vec<f64>) {
        let g = DiscreteAction::gradient(self, q, p, xi);
        (g.dx, g.dy, g.dxi)
    }
}

/// Ball around the coupling center containing every fiber-critical point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberBox {
    pub radius: f64,
    /// Smallest singular value of the fiber Hessian of the coupling.
    pub sigma_min: f64,
    /// Euclidean bound on the fiber gradient of the step terms.
    pub grad_bound: f64,
}

/// `σ_min` of the coupling's fiber Hessian: a signed path matrix on `2(k−1)` nodes.
pub fn coupling_sigma_min(k: usize) -> f64 {
    if k <= 1 {
        return f64::INFINITY;
    }
    2.0 * (std::f64::consts::PI / (2.0 * (2 * k - 1) as f64)).sin()
}

/// Box of radius `2C/σ_min` about [`DiscreteAction::coupling_center`].
pub fn fiber_box(f: &DiscreteAction) -> FiberBox {
    let k = f.k();
    if k == 1 {
        return FiberBox { radius: 0.0, sigma_min: f64::INFINITY, grad_bound: 0.0 };
    }
    let h = f.step().field();
    let tau = f.tau();
    let m = f.scale();
    let a = tau * h.sup_abs_dp() / m;
    let b = tau * h.sup_abs_dq();
    let c = ((k - 1) as f64 * (a * a + b * b)).sqrt();
    let sigma_min = coupling_sigma_min(k);
    FiberBox { radius: 2.0 * c / sigma_min, sigma_min, grad_bound: c }
}
