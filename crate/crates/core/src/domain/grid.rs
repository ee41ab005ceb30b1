use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on the period-1 circle. Nodes are `j / n` for `0 <= j < n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    n: usize,
}

impl TorusGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("torus grid needs at least one node".into()));
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Spacing as the exact rational `(1, n)`.
    pub fn spacing_ratio(&self) -> (u64, u64) {
        (1, self.n as u64)
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        (j % self.n) as f64 / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    /// Wraps a signed index into `0..n`.
    pub fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.n as isize) as usize
    }

    /// Cell index and fractional offset of `q` (any real) inside its cell.
    pub fn locate(&self, q: f64) -> (usize, f64) {
        let s = q.rem_euclid(1.0) * self.n as f64;
        let i = s.floor();
        let frac = s - i;
        ((i as usize) % self.n, frac)
    }

    /// Grid with `factor` times as many nodes.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        Self::new(self.n * factor)
    }
}

/// Equispaced momentum nodes including both endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumGrid {
    p_min: f64,
    p_max: f64,
    n: usize,
}

impl MomentumGrid {
    pub fn new(p_min: f64, p_max: f64, n: usize) -> Result<Self> {
        if !(p_min.is_finite() && p_max.is_finite()) || p_min >= p_max {
            return Err(Error::InvalidInput(format!(
                "momentum grid needs finite p_min < p_max, got [{p_min}, {p_max}]"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidInput("momentum grid needs at least two nodes".into()));
        }
        Ok(Self { p_min, p_max, n })
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.p_max - self.p_min) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.p_max
        } else {
            self.p_min + (self.p_max - self.p_min) * i as f64 / (self.n - 1) as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    pub fn contains(&self, p: f64) -> bool {
        p >= self.p_min && p <= self.p_max
    }

    /// Cell index `i` (so `p` lies in `[node(i), node(i+1)]`) and fractional offset.
    /// Momenta outside the range are clamped to the nearest end.
    pub fn locate(&self, p: f64) -> (usize, f64) {
        let s = ((p - self.p_min) / self.spacing()).clamp(0.0, (self.n - 1) as f64);
        let i = (s.floor() as usize).min(self.n - 2);
        (i, s - i as f64)
    }

    pub fn max_abs(&self) -> f64 {
        self.p_min.abs().max(self.p_max.abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_nodes_wrap() {
        let g = TorusGrid::new(8).unwrap();
        assert_eq!(g.node(8), 0.0);
        assert_eq!(g.wrap(-1), 7);
        assert_eq!(g.wrap(17), 1);
        assert_eq!(g.spacing_ratio(), (1, 8));
        let (i, f) = g.locate(-0.0625);
        assert_eq!(i, 7);
        assert!((f - 0.5).abs() < 1e-12);
    }

    #[test]
    fn momentum_nodes_hit_endpoints() {
        let g = MomentumGrid::new(-2.0, 2.0, 33).unwrap();
        assert_eq!(g.node(0), -2.0);
        assert_eq!(g.node(32), 2.0);
        assert_eq!(g.node(16), 0.0);
        assert!((g.spacing() - 0.125).abs() < 1e-15);
        assert_eq!(g.locate(2.0).0, 31);
        assert!(MomentumGrid::new(1.0, 1.0, 3).is_err());
    }
}
