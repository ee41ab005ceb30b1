//! Full cubical slices of the normalized action for Hamiltonians without convexity.
//!
//! The coupling `Σ (p_j − y)(q_j − q_{j+1}) = Σ a_j b_j` is diagonalized by
//! `a_j = λ(σ_j + t_j)`, `b_j = (σ_j − t_j)/λ`, so the normalized action
//! `−F/τ` decreases like `−σ_j²/τ` along the `σ` axes (the negative end) and
//! grows like `t_j²/τ` along the `t` axes.

use super::complex::{Axis, SublevelComplex};
use crate::error::{Error, Result};
use crate::genfun::{ActionMode, DiscreteAction};

/// Geometry of a general slice, shared by every `y`.
#[derive(Clone, Debug)]
pub struct GeneralLayout {
    pub lambda: f64,
    /// Half-width of the core box containing every critical point.
    pub core: f64,
    /// Coordinates of each negative axis (core plus graded extension).
    pub sigma: Vec<f64>,
    /// Coordinates of each positive axis.
    pub t: Vec<f64>,
    pub n_x: usize,
}

impl GeneralLayout {
    pub fn new(f: &DiscreteAction, n_x: usize, n_core: usize, n_extra: usize) -> Result<Self> {
        let k = f.k();
        if n_core < 3 || n_core % 2 == 0 {
            return Err(Error::InvalidInput(format!("core fiber resolution must be odd and >= 3, got {n_core}")));
        }
        let h = f.step().field();
        let tau = f.tau();
        let m = match f.mode() {
            ActionMode::Rescaled => k as f64,
            ActionMode::Plain => 1.0,
        };
        let a = ((k - 1) as f64 * tau * h.sup_abs_dq()).max(1e-6);
        let b = (tau / m * h.sup_abs_dp()).max(1e-6);
        let lambda = (a / b).sqrt();
        let core = 2.0 * (a * b).sqrt();
        let step_sup = tau * h.sup_abs() * if f.mode() == ActionMode::Plain { k as f64 } else { 1.0 };
        let need = (2.0 * step_sup + 2.0 * (k - 1) as f64 * core * core).sqrt();
        let reach = (1.2 * need).max(1.5 * core);
        let t = Axis::symmetric(core, n_core);
        let sigma = graded(core, reach, n_core, n_extra);
        Ok(Self { lambda, core, sigma, t, n_x })
    }

    /// Doubles the reach of the negative axes.
    pub fn extended(&self, n_core: usize, n_extra: usize) -> Self {
        let reach = 2.0 * self.sigma.last().copied().unwrap_or(self.core);
        Self { sigma: graded(self.core, reach, n_core, n_extra), ..self.clone() }
    }

    pub fn cell_count(&self, k: usize) -> usize {
        let per = (2 * self.sigma.len() - 1) * (2 * self.t.len() - 1);
        2 * self.n_x * per.pow((k - 1) as u32)
    }

    /// The slice at momentum `y`, together with the core margin
    /// `min(core values) − max(negative-end values)`.
    pub fn complex(&self, f: &DiscreteAction, y: f64) -> Result<(SublevelComplex, f64)> {
        let k = f.k();
        let mut axes = vec![Axis::periodic(self.n_x)];
        for _ in 1..k {
            axes.push(Axis::negative(self.sigma.clone()));
            axes.push(Axis::interval(self.t.clone()));
        }
        let lambda = self.lambda;
        let cx = SublevelComplex::from_fn(axes, |c| {
            let x = c[0];
            let mut xi = Vec::with_capacity(2 * (k - 1));
            let mut q = x;
            for j in 0..k - 1 {
                let (s, t) = (c[1 + 2 * j], c[2 + 2 * j]);
                let a = lambda * (s + t);
                let b = (s - t) / lambda;
                q -= b;
                xi.push(y + a);
                xi.push(q);
            }
            f.normalized(x, y, &xi)
        })?;
        let core = self.core * (1.0 + 1e-12);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (v, &val) in cx.values().iter().enumerate() {
            let idx = cx.vertex_index(v);
            if cx.vertex_in_negative_end(v) {
                hi = hi.max(val);
            } else if (1..idx.len()).step_by(2).all(|i| self.sigma[idx[i]].abs() <= core) {
                lo = lo.min(val);
            }
        }
        Ok((cx, lo - hi))
    }
}

/// `n_core` uniform nodes on `[−core, core]` plus `n_extra` geometric nodes on each side out to `reach`.
pub fn graded(core: f64, reach: f64, n_core: usize, n_extra: usize) -> Vec<f64> {
    let inner = Axis::symmetric(core, n_core);
    let ratio = (reach / core).powf(1.0 / n_extra.max(1) as f64);
    let outer: Vec<f64> = (1..=n_extra.max(1)).map(|i| core * ratio.powi(i as i32)).collect();
    let mut v: Vec<f64> = outer.iter().rev().map(|x| -x).collect();
    v.extend(inner);
    v.extend(outer);
    v
}
