//! Fiber reduction of the discrete action for Hamiltonians convex (or concave) in `p`.
//!
//! For convex `H`, the action is concave in every free momentum `p_j`, and
//! maximizing it out leaves
//! `G(x, b) = Σ_{j<k} [(τ/m) L(m q_j, m b_j/τ) − y b_j] − (τ/m) H(m q_k, y)`
//! with `b_j = q_j − q_{j+1}`, `q_1 = x` and `m` the rescaling factor. `G` is
//! coercive in `b`, so the min-max values of the normalized action become the
//! minimum and the loop min-max of `G`.

use rayon::prelude::*;

use super::complex::{birth, Axis, Birth, ClassKind, SublevelComplex};
use crate::domain::HamiltonianField;
use crate::error::{Error, Result};

/// Largest momentum magnitude probed when bracketing `H_p = v`.
const BRACKET_LIMIT: f64 = 1e6;

/// `L(q, v) = sup_p [p v − H(q, p)]` for `H` convex in `p`, by bisection on `H_p(q, ·) = v`.
pub fn legendre_value(h: &HamiltonianField, q: f64, v: f64) -> Result<f64> {
    let dp = |p: f64| h.gradient(q, p).1;
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    while dp(lo) > v {
        lo *= 2.0;
        if lo < -BRACKET_LIMIT {
            return Err(Error::NotCoercive(format!("dH/dp never drops to {v} at q = {q}")));
        }
    }
    while dp(hi) < v {
        hi *= 2.0;
        if hi > BRACKET_LIMIT {
            return Err(Error::NotCoercive(format!("dH/dp never reaches {v} at q = {q}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dp(mid) < v {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * (1.0 + hi.abs()) {
            break;
        }
    }
    // Each candidate gives a lower bound of the supremum; the largest is kept.
    Ok([lo, 0.5 * (lo + hi), hi].iter().map(|&p| p * v - h.value(q, p)).fold(f64::NEG_INFINITY, f64::max))
}

/// Sign of the convexity exploited by the reduction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Curvature {
    Convex,
    Concave,
}

/// The `y`-independent part of the reduced function on a fixed grid.
pub struct ReducedGrid {
    h: HamiltonianField,
    curvature: Curvature,
    tau: f64,
    scale: f64,
    axes: Vec<Axis>,
    /// `Σ_j (τ/m) L(m q_j, ±m b_j/τ)` per vertex.
    lsum: Vec<f64>,
    /// `Σ_j b_j` per vertex.
    bsum: Vec<f64>,
    /// `q_k` per vertex.
    q_last: Vec<f64>,
    pub b_max: f64,
}

impl ReducedGrid {
    /// Grid with `n_x` periodic nodes and `n_b` nodes per `b` axis on `[−b_max, b_max]`.
    pub fn new(
        h: &HamiltonianField,
        curvature: Curvature,
        k: usize,
        scale: f64,
        tau: f64,
        n_x: usize,
        n_b: usize,
        b_max: f64,
    ) -> Result<Self> {
        let mut axes = vec![Axis::periodic(n_x)];
        for _ in 1..k {
            axes.push(Axis::interval(Axis::symmetric(b_max, n_b)));
        }
        let lag = match curvature {
            Curvature::Convex => h.clone(),
            Curvature::Concave => h.scaled(-1.0, format!("-{}", h.name()))?,
        };
        let sign = match curvature {
            Curvature::Convex => 1.0,
            Curvature::Concave => -1.0,
        };
        let shape: Vec<usize> = axes.iter().map(Axis::len).collect();
        let n: usize = shape.iter().product();
        let rows: Vec<Result<(f64, f64, f64)>> = (0..n)
            .into_par_iter()
            .map(|v| {
                let mut r = v;
                let mut coords = vec![0.0; axes.len()];
                for i in (0..axes.len()).rev() {
                    coords[i] = axes[i].coords[r % shape[i]];
                    r /= shape[i];
                }
                let mut q = coords[0];
                let mut lsum = 0.0;
                let mut bsum = 0.0;
                for &b in &coords[1..] {
                    lsum += tau / scale * legendre_value(&lag, scale * q, sign * scale * b / tau)?;
                    bsum += b;
                    q -= b;
                }
                Ok((lsum, bsum, q))
            })
            .collect();
        let mut lsum = Vec::with_capacity(n);
        let mut bsum = Vec::with_capacity(n);
        let mut q_last = Vec::with_capacity(n);
        for r in rows {
            let (a, b, c) = r?;
            lsum.push(a);
            bsum.push(b);
            q_last.push(c);
        }
        Ok(Self { h: h.clone(), curvature, tau, scale, axes, lsum, bsum, q_last, b_max })
    }

    pub fn vertex_count(&self) -> usize {
        self.lsum.len()
    }

    /// The reduced complex at momentum `y` (values in action units).
    pub fn complex(&self, y: f64) -> Result<SublevelComplex> {
        let (tau, m) = (self.tau, self.scale);
        let values: Vec<f64> = (0..self.lsum.len())
            .into_par_iter()
            .map(|v| {
                let end = tau / m * self.h.value(m * self.q_last[v], y);
                match self.curvature {
                    Curvature::Convex => self.lsum[v] - y * self.bsum[v] - end,
                    Curvature::Concave => self.lsum[v] + y * self.bsum[v] + end,
                }
            })
            .collect();
        SublevelComplex::new(self.axes.clone(), values)
    }

    /// Normalized `(c_minus, c_plus)` at `y` with their attaining vertices and the complex.
    pub fn invariants(&self, y: f64) -> Result<(Birth, Birth, SublevelComplex)> {
        let cx = self.complex(y)?;
        let low = birth(&cx, ClassKind::Unit, usize::MAX)?;
        let loop_ = birth(&cx, ClassKind::Fundamental, usize::MAX)?;
        let t = self.tau;
        Ok(match self.curvature {
            Curvature::Convex => (
                Birth { value: -loop_.value / t, vertex: loop_.vertex },
                Birth { value: -low.value / t, vertex: low.vertex },
                cx,
            ),
            Curvature::Concave => (
                Birth { value: low.value / t, vertex: low.vertex },
                Birth { value: loop_.value / t, vertex: loop_.vertex },
                cx,
            ),
        })
    }

    /// Normalization applied to raw complex values: `−1/τ` (convex) or `1/τ` (concave).
    pub fn normalization(&self) -> f64 {
        match self.curvature {
            Curvature::Convex => -1.0 / self.tau,
            Curvature::Concave => 1.0 / self.tau,
        }
    }
}
