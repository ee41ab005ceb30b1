//! Declarative experiment configuration.
//!
//! A config is a TOML document. Unknown keys are rejected, every section except
//! `[preset]` is optional, and [`ExperimentConfig::validate`] reports the first
//! violation together with its dotted key path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use effham::domain::{MomentumGrid, PresetCatalog};
use effham::homog::{Backend, Property, MAX_MINMAX_K};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {key}: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output directory; `--out` and `EFFHAM_OUT` take precedence. Not part of the config hash.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// Seed of the randomized property inputs.
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub preset: PresetSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub curves: Option<CurvesSection>,
    #[serde(default)]
    pub minmax: MinmaxSection,
    #[serde(default)]
    pub weakkam: WeakkamSection,
    #[serde(default)]
    pub properties: Option<PropertiesSection>,
    #[serde(default)]
    pub experiment: Option<HjExperimentSection>,
    #[serde(default)]
    pub cpm: Option<CpmSection>,
}

fn default_seed() -> u64 {
    7
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetSection {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Amplitude of the shear conjugation applied after sampling; `0` leaves the preset as is.
    #[serde(default)]
    pub shear: f64,
}

/// Sampling grid of the Hamiltonian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "GridSection::default_n_q")]
    pub n_q: usize,
    #[serde(default = "GridSection::default_p_min")]
    pub p_min: f64,
    #[serde(default = "GridSection::default_p_max")]
    pub p_max: f64,
    #[serde(default = "GridSection::default_n_p")]
    pub n_p: usize,
}

impl GridSection {
    fn default_n_q() -> usize {
        64
    }
    fn default_p_min() -> f64 {
        -2.0
    }
    fn default_p_max() -> f64 {
        2.0
    }
    fn default_n_p() -> usize {
        81
    }
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            n_q: Self::default_n_q(),
            p_min: Self::default_p_min(),
            p_max: Self::default_p_max(),
            n_p: Self::default_n_p(),
        }
    }
}

/// Effective Hamiltonian curves, one per backend, on a common output grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesSection {
    pub backends: Vec<Backend>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Output grid `[p_min, p_max]` with `n_p` nodes; defaults to the sampling grid.
    pub p_min: Option<f64>,
    pub p_max: Option<f64>,
    pub n_p: Option<usize>,
}

fn default_k() -> usize {
    MAX_MINMAX_K
}

fn default_tau() -> f64 {
    effham::minmax::DEFAULT_TAU
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinmaxSection {
    pub n_x: Option<usize>,
    pub n_fiber: Option<usize>,
    pub n_extra: Option<usize>,
    pub velocity_bound: Option<f64>,
    pub cell_budget: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakkamSection {
    pub horizon: Option<f64>,
    pub tau: Option<f64>,
    pub n_q: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertiesSection {
    #[serde(default = "all_properties")]
    pub suite: Vec<Property>,
    #[serde(default = "default_property_backend")]
    pub backend: Backend,
    pub sandwich_backend: Option<Backend>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Output grid of the compared curves; defaults to `[-1, 1]` with 9 nodes.
    #[serde(default = "default_property_pgrid")]
    pub pgrid: (f64, f64, usize),
    #[serde(default = "default_p0")]
    pub p0: f64,
    #[serde(default = "default_lipschitz_pairs")]
    pub lipschitz_pairs: usize,
    #[serde(default = "default_sandwich_trials")]
    pub sandwich_trials: usize,
    #[serde(default = "default_budget_factor")]
    pub budget_factor: f64,
}

fn all_properties() -> Vec<Property> {
    Property::ALL.to_vec()
}
fn default_property_backend() -> Backend {
    Backend::Minmax
}
fn default_property_pgrid() -> (f64, f64, usize) {
    (-1.0, 1.0, 9)
}
fn default_p0() -> f64 {
    0.3
}
fn default_lipschitz_pairs() -> usize {
    20
}
fn default_sandwich_trials() -> usize {
    10
}
fn default_budget_factor() -> f64 {
    1.5
}

impl Default for PropertiesSection {
    fn default() -> Self {
        Self {
            suite: all_properties(),
            backend: default_property_backend(),
            sandwich_backend: None,
            k: default_k(),
            tau: default_tau(),
            pgrid: default_property_pgrid(),
            p0: default_p0(),
            lipschitz_pairs: default_lipschitz_pairs(),
            sandwich_trials: default_sandwich_trials(),
            budget_factor: default_budget_factor(),
        }
    }
}

/// Homogenization of `u_t + H(kq, u_q) = 0` with `u(0) = amplitude cos(2 pi mode q)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjExperimentSection {
    pub ks: Vec<usize>,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_mode")]
    pub mode: u32,
    pub n_cell: Option<usize>,
    pub tau: Option<f64>,
    pub times: Option<Vec<f64>>,
    pub max_nodes: Option<usize>,
}

fn default_amplitude() -> f64 {
    0.1
}
fn default_mode() -> u32 {
    1
}

/// The sequence `(1/k) c±(φᵏ)` for `k = 1..k_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpmSection {
    pub k_max: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub window: Option<(f64, f64)>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let cfg = Self::parse(&text).map_err(|message| ConfigError::Parse { path: path.into(), message })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without semantic validation.
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string() + &location(text, &e))
    }

    /// Checks value ranges; the error names the first offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let info = PresetCatalog::list()
            .into_iter()
            .find(|i| i.name == self.preset.name)
            .ok_or_else(|| invalid("preset.name", format!("unknown preset '{}' (see list-presets)", self.preset.name)))?;
        if info.time_dependent {
            return Err(invalid("preset.name", format!("'{}' is time-dependent; only autonomous presets run", info.name)));
        }
        if let Some(key) = self.preset.params.keys().find(|k| !info.params.iter().any(|(p, _)| p == *k)) {
            return Err(invalid(&format!("preset.params.{key}"), format!("preset '{}' has no such parameter", info.name)));
        }
        if let Some((key, _)) = self.preset.params.iter().find(|(_, v)| !v.is_finite()) {
            return Err(invalid(&format!("preset.params.{key}"), "must be finite"));
        }
        finite("preset.shear", self.preset.shear)?;

        let g = &self.grid;
        if g.n_q < 4 {
            return Err(invalid("grid.n_q", "must be at least 4"));
        }
        check_pgrid("grid", g.p_min, g.p_max, g.n_p)?;

        if let Some(c) = &self.curves {
            if c.backends.is_empty() {
                return Err(invalid("curves.backends", "must name at least one backend"));
            }
            check_k("curves.k", c.k)?;
            positive("curves.tau", c.tau)?;
            let pg = self.curves_pgrid();
            check_pgrid("curves", pg.0, pg.1, pg.2)?;
        }

        let m = &self.minmax;
        if let Some(n) = m.n_fiber {
            if n < 3 || n % 2 == 0 {
                return Err(invalid("minmax.n_fiber", "must be odd and at least 3"));
            }
        }
        if let Some(n) = m.n_x {
            if n < 4 {
                return Err(invalid("minmax.n_x", "must be at least 4"));
            }
        }
        if let Some(v) = m.velocity_bound {
            positive("minmax.velocity_bound", v)?;
        }
        if m.cell_budget == Some(0) {
            return Err(invalid("minmax.cell_budget", "must be positive"));
        }

        let w = &self.weakkam;
        if let Some(h) = w.horizon {
            positive("weakkam.horizon", h)?;
        }
        if let Some(t) = w.tau {
            positive("weakkam.tau", t)?;
        }
        if let Some(n) = w.n_q {
            if n < 4 {
                return Err(invalid("weakkam.n_q", "must be at least 4"));
            }
        }
        if let (Some(h), Some(t)) = (w.horizon, w.tau) {
            let s = (h / t).round();
            if (s * t - h).abs() > 1e-9 * h.max(1.0) || s < 2.0 || s as u64 % 2 != 0 {
                return Err(invalid("weakkam.horizon", format!("must be an even multiple of weakkam.tau = {t}")));
            }
        }

        if let Some(p) = &self.properties {
            if p.suite.is_empty() {
                return Err(invalid("properties.suite", "must name at least one property"));
            }
            check_k("properties.k", p.k)?;
            positive("properties.tau", p.tau)?;
            check_pgrid("properties.pgrid", p.pgrid.0, p.pgrid.1, p.pgrid.2)?;
            finite("properties.p0", p.p0)?;
            positive("properties.budget_factor", p.budget_factor)?;
        }

        if let Some(e) = &self.experiment {
            if e.ks.is_empty() || e.ks.contains(&0) {
                return Err(invalid("experiment.ks", "must be a nonempty list of positive integers"));
            }
            finite("experiment.amplitude", e.amplitude)?;
            if e.mode == 0 {
                return Err(invalid("experiment.mode", "must be positive"));
            }
            if let Some(n) = e.n_cell {
                if n < 4 {
                    return Err(invalid("experiment.n_cell", "must be at least 4"));
                }
            }
            if let Some(t) = e.tau {
                positive("experiment.tau", t)?;
            }
            if let Some(ts) = &e.times {
                if ts.is_empty() {
                    return Err(invalid("experiment.times", "must be nonempty"));
                }
                let tau = e.tau.unwrap_or(effham::hj::ExperimentParams::default().tau);
                if let Some(t) = ts.iter().find(|&&t| !(t > 0.0) || ((t / tau).round() * tau - t).abs() > 1e-9) {
                    return Err(invalid("experiment.times", format!("{t} is not a positive multiple of experiment.tau = {tau}")));
                }
            }
        }

        if let Some(c) = &self.cpm {
            check_k("cpm.k_max", c.k_max)?;
            positive("cpm.tau", c.tau)?;
            if let Some((lo, hi)) = c.window {
                if !(lo <= hi) {
                    return Err(invalid("cpm.window", "needs lo <= hi"));
                }
            }
        }
        Ok(())
    }

    pub fn curves_pgrid(&self) -> (f64, f64, usize) {
        let c = self.curves.as_ref();
        (
            c.and_then(|c| c.p_min).unwrap_or(self.grid.p_min),
            c.and_then(|c| c.p_max).unwrap_or(self.grid.p_max),
            c.and_then(|c| c.n_p).unwrap_or(self.grid.n_p),
        )
    }

    /// Hex SHA-256 of the canonical JSON form (the output directory excluded).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn location(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

fn finite(key: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, "must be finite"))
    }
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(key, format!("must be positive and finite, got {v}")))
    }
}

fn check_k(key: &str, k: usize) -> Result<(), ConfigError> {
    if (1..=MAX_MINMAX_K).contains(&k) {
        Ok(())
    } else {
        Err(invalid(key, format!("must lie in 1..={MAX_MINMAX_K}, got {k}")))
    }
}

fn check_pgrid(section: &str, lo: f64, hi: f64, n: usize) -> Result<(), ConfigError> {
    MomentumGrid::new(lo, hi, n).map(|_| ()).map_err(|e| invalid(section, e.to_string()))
}
