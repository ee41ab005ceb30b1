use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::MomentumGrid;
use crate::error::{Error, Result};

/// Route by which an effective Hamiltonian was computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Minmax,
    Weakkam,
    Levelset,
    ExactPOnly,
}

impl Backend {
    pub fn as_str(&self) -> &'static str {
        match self {
            Backend::Minmax => "minmax",
            Backend::Weakkam => "weakkam",
            Backend::Levelset => "levelset",
            Backend::ExactPOnly => "exact_p_only",
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(Backend::Minmax),
            "weakkam" => Ok(Backend::Weakkam),
            "levelset" => Ok(Backend::Levelset),
            "exact_p_only" => Ok(Backend::ExactPOnly),
            other => Err(Error::InvalidInput(format!("unknown backend '{other}'"))),
        }
    }
}

/// A sampled curve `h̄(p)` with provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveHamiltonian {
    /// Name of the Hamiltonian the curve was computed from.
    pub source: String,
    pub backend: Backend,
    pub pgrid: MomentumGrid,
    pub values: Vec<f64>,
    /// Unit-class values per node (min-max backend only).
    pub c_minus: Option<Vec<f64>>,
    /// Fundamental-class values per node (min-max backend only).
    pub c_plus: Option<Vec<f64>>,
    pub k: Option<usize>,
    pub tau: Option<f64>,
    /// Named resolution parameters (grid sizes, horizons, panels).
    pub resolution: BTreeMap<String, f64>,
    /// Estimated sup-norm distance to the exact effective Hamiltonian.
    pub error_estimate: f64,
    /// Additive constant shared by every node.
    pub normalization_constant: f64,
}

impl EffectiveHamiltonian {
    pub fn new(source: impl Into<String>, backend: Backend, pgrid: MomentumGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != pgrid.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                pgrid.len()
            )));
        }
        Ok(Self {
            source: source.into(),
            backend,
            pgrid,
            values,
            c_minus: None,
            c_plus: None,
            k: None,
            tau: None,
            resolution: BTreeMap::new(),
            error_estimate: 0.0,
            normalization_constant: 0.0,
        })
    }

    pub fn with_error_estimate(mut self, e: f64) -> Self {
        self.error_estimate = e;
        self
    }

    pub fn with_resolution(mut self, key: &str, value: f64) -> Self {
        self.resolution.insert(key.to_string(), value);
        self
    }

    /// Piecewise-linear evaluation, clamped to the grid range.
    pub fn value(&self, p: f64) -> f64 {
        let (i, f) = self.pgrid.locate(p);
        self.values[i] + f * (self.values[i + 1] - self.values[i])
    }

    /// Largest discrete slope.
    pub fn lipschitz(&self) -> f64 {
        let h = self.pgrid.spacing();
        self.values.windows(2).fold(0.0_f64, |m, w| m.max((w[1] - w[0]).abs() / h))
    }

    /// `sup |self − other|` over the nodes of `self`.
    pub fn sup_distance(&self, other: &EffectiveHamiltonian) -> f64 {
        self.pgrid
            .nodes()
            .iter()
            .zip(&self.values)
            .fold(0.0_f64, |m, (&p, &v)| m.max((v - other.value(p)).abs()))
    }

    /// `∫ |self − other|` over the grid by the trapezoid rule on the nodes of `self`.
    pub fn l1_distance(&self, other: &EffectiveHamiltonian) -> f64 {
        let h = self.pgrid.spacing();
        let d: Vec<f64> = self.pgrid.nodes().iter().zip(&self.values).map(|(&p, &v)| (v - other.value(p)).abs()).collect();
        d.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// CSV with columns `p, h, c_minus, c_plus`; missing columns are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W, header_comment: Option<&str>) -> Result<()> {
        if let Some(c) = header_comment {
            writeln!(w, "# {c}")?;
        }
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["p", "h", "c_minus", "c_plus"])?;
        let opt = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
        for (i, p) in self.pgrid.nodes().iter().enumerate() {
            cw.write_record(&[p.to_string(), self.values[i].to_string(), opt(&self.c_minus, i), opt(&self.c_plus, i)])?;
        }
        cw.flush()?;
        Ok(())
    }

    /// JSON metadata without the per-node payload.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "source": self.source,
            "backend": self.backend,
            "k": self.k,
            "tau": self.tau,
            "pgrid": self.pgrid,
            "resolution": self.resolution,
            "error_estimate": self.error_estimate,
            "normalization_constant": self.normalization_constant,
        })
    }
}

impl EffectiveHamiltonian {
    /// The curve as a `p`-only field on `qgrid`, sampled at the curve's own nodes.
    pub fn to_field(&self, qgrid: crate::domain::TorusGrid) -> Result<crate::domain::HamiltonianField> {
        let mut values = Vec::with_capacity(qgrid.len() * self.values.len());
        for _ in 0..qgrid.len() {
            values.extend_from_slice(&self.values);
        }
        crate::domain::HamiltonianField::from_table(format!("A({})", self.source), qgrid, self.pgrid, values)
    }
}
