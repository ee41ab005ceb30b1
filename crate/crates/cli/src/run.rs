use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use effham::domain::{HamiltonianField, MomentumGrid, PeriodicFn, PresetCatalog, TorusGrid};
use effham::hj::{homogenization_experiment, EpsilonFit, ExperimentParams, HomogenizationReport};
use effham::homog::{check_properties, homogenize, Backend, EffectiveHamiltonian, HomogParams, PropertyConfig, PropertyReport};
use effham::minmax::{c_pm_iterates, CpmSequence, MinmaxParams};
use effham::weakkam::AlphaParams;
use serde::Serialize;

use crate::config::{ExperimentConfig, PropertiesSection, VERSION};
use crate::svg::{Plot, Series};

/// Settings that come from the command line rather than the config file.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Multiplies every comparison budget.
    pub tolerance_scale: f64,
}

/// `sup` and `L¹` distance between two curves of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveDiff {
    pub a: String,
    pub b: String,
    pub sup: f64,
    pub l1: f64,
    pub budget: f64,
    pub within_budget: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PropertySummary {
    pub all_pass: bool,
    pub checks: usize,
    pub failed: Vec<String>,
}

/// Everything a run produced, as recorded in `manifest.json`.
#[derive(Clone, Debug, Serialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub outputs: Vec<String>,
    pub curves: Vec<serde_json::Value>,
    pub diffs: Vec<CurveDiff>,
    pub properties: Option<PropertySummary>,
    pub experiment: Option<Vec<EpsilonFit>>,
    pub cpm: Option<CpmSequence>,
    pub wall_clock_s: f64,
}

impl ResultRecord {
    pub fn properties_failed(&self) -> bool {
        self.properties.as_ref().is_some_and(|p| !p.all_pass)
    }
}

/// Writes payload files into one directory, each stamped with the config hash and version.
struct Artifacts {
    dir: PathBuf,
    hash: String,
    stamp: String,
    written: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path, hash: &str) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), hash: hash.to_string(), stamp: format!("config_hash={hash}, version={VERSION}"), written: Vec::new() })
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        body(&mut buf)?;
        let path = self.dir.join(name);
        fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn csv(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let stamp = self.stamp.clone();
        self.write(name, |buf| {
            writeln!(buf, "# {stamp}")?;
            body(buf)
        })
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let doc = serde_json::json!({
            "config_hash": self.hash,
            "version": VERSION,
            "payload": value,
        });
        self.write(name, |buf| {
            serde_json::to_writer_pretty(&mut *buf, &doc)?;
            buf.push(b'\n');
            Ok(())
        })
    }

    fn svg(&mut self, name: &str, plot: &Plot) -> Result<()> {
        let text = plot.render(&self.stamp);
        self.write(name, |buf| {
            buf.extend_from_slice(text.as_bytes());
            Ok(())
        })
    }
}

pub fn build_field(cfg: &ExperimentConfig) -> Result<HamiltonianField> {
    let qgrid = TorusGrid::new(cfg.grid.n_q)?;
    let pgrid = MomentumGrid::new(cfg.grid.p_min, cfg.grid.p_max, cfg.grid.n_p)?;
    let field = PresetCatalog::field(&cfg.preset.name, &cfg.preset.params, qgrid, pgrid)
        .with_context(|| format!("sampling preset '{}'", cfg.preset.name))?;
    if cfg.preset.shear == 0.0 {
        return Ok(field);
    }
    Ok(PresetCatalog::sheared(&field, cfg.preset.shear)?)
}

fn minmax_params(cfg: &ExperimentConfig) -> MinmaxParams {
    let d = MinmaxParams::default();
    let m = &cfg.minmax;
    MinmaxParams {
        n_x: m.n_x,
        n_fiber: m.n_fiber.unwrap_or(d.n_fiber),
        n_extra: m.n_extra.unwrap_or(d.n_extra),
        velocity_bound: m.velocity_bound,
        cell_budget: m.cell_budget.unwrap_or(d.cell_budget),
        max_growth: d.max_growth,
    }
}

fn alpha_params(cfg: &ExperimentConfig) -> AlphaParams {
    let d = AlphaParams::default();
    let w = &cfg.weakkam;
    AlphaParams {
        horizon: w.horizon.unwrap_or(d.horizon),
        tau: w.tau.unwrap_or(d.tau),
        n_q: w.n_q.unwrap_or(d.n_q),
        ..d
    }
}

/// Property-suite settings for `h`, with budgets scaled by `tolerance_scale`.
pub fn property_config(cfg: &ExperimentConfig, section: &PropertiesSection, tolerance_scale: f64) -> Result<PropertyConfig> {
    let (lo, hi, n) = section.pgrid;
    Ok(PropertyConfig {
        suite: section.suite.clone(),
        backend: section.backend,
        sandwich_backend: section.sandwich_backend,
        params: HomogParams {
            pgrid: Some(MomentumGrid::new(lo, hi, n)?),
            k: section.k,
            tau: section.tau,
            minmax: minmax_params(cfg),
            alpha: alpha_params(cfg),
        },
        seed: cfg.seed,
        lipschitz_pairs: section.lipschitz_pairs,
        sandwich_trials: section.sandwich_trials,
        budget_factor: section.budget_factor * tolerance_scale,
    })
}

fn curve_label(requested: Backend, c: &EffectiveHamiltonian) -> String {
    match c.k {
        Some(k) => format!("{requested} (k={k})"),
        None if c.backend != requested => format!("{requested} ({})", c.backend),
        None => requested.to_string(),
    }
}

/// Distances between every pair of curves, labelled by the requested backend.
fn pairwise_diffs(curves: &[(Backend, EffectiveHamiltonian)], tolerance_scale: f64) -> Vec<CurveDiff> {
    let mut out = Vec::new();
    for (i, (na, a)) in curves.iter().enumerate() {
        for (nb, b) in &curves[i + 1..] {
            let sup = a.sup_distance(b);
            let budget = tolerance_scale * (a.error_estimate + b.error_estimate);
            out.push(CurveDiff {
                a: na.to_string(),
                b: nb.to_string(),
                sup,
                l1: a.l1_distance(b),
                budget,
                within_budget: sup <= budget,
            });
        }
    }
    out
}

fn curves_step(cfg: &ExperimentConfig, h: &HamiltonianField, art: &mut Artifacts, rec: &mut ResultRecord, scale: f64) -> Result<()> {
    let Some(section) = &cfg.curves else { return Ok(()) };
    let (lo, hi, n) = cfg.curves_pgrid();
    let params = HomogParams {
        pgrid: Some(MomentumGrid::new(lo, hi, n)?),
        k: section.k,
        tau: section.tau,
        minmax: minmax_params(cfg),
        alpha: alpha_params(cfg),
    };
    let mut curves = Vec::new();
    for &backend in &section.backends {
        let c = homogenize(h, backend, &params).with_context(|| format!("effective Hamiltonian of {}", h.name()))?;
        art.csv(&format!("hbar_{backend}.csv"), |buf| {
            c.write_csv(&mut *buf, Some(&format!("backend={}, error_estimate={}", c.backend, c.error_estimate)))?;
            Ok(())
        })?;
        rec.curves.push(c.metadata());
        curves.push((backend, c));
    }
    rec.diffs = pairwise_diffs(&curves, scale);
    let diffs = rec.diffs.clone();
    art.csv("diff_table.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["a", "b", "sup", "l1", "budget", "within_budget"])?;
        for d in &diffs {
            w.write_record([d.a.clone(), d.b.clone(), d.sup.to_string(), d.l1.to_string(), d.budget.to_string(), d.within_budget.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let plot = Plot {
        title: format!("effective Hamiltonian of {}", h.name()),
        x_label: "p".into(),
        y_label: "h̄(p)".into(),
        series: curves
            .iter()
            .map(|(b, c)| Series { label: curve_label(*b, c), points: c.pgrid.nodes().into_iter().zip(c.values.iter().copied()).collect(), markers: false })
            .collect(),
    };
    art.svg("hbar.svg", &plot)
}

fn properties_step(cfg: &ExperimentConfig, h: &HamiltonianField, art: &mut Artifacts, rec: &mut ResultRecord, scale: f64) -> Result<()> {
    let Some(section) = &cfg.properties else { return Ok(()) };
    let report = run_properties(cfg, section, h, scale)?;
    art.json("properties.json", &report)?;
    rec.properties = Some(summarize(&report));
    Ok(())
}

pub fn run_properties(cfg: &ExperimentConfig, section: &PropertiesSection, h: &HamiltonianField, scale: f64) -> Result<PropertyReport> {
    let pc = property_config(cfg, section, scale)?;
    Ok(check_properties(h, None, None, section.p0, &pc))
}

pub fn summarize(report: &PropertyReport) -> PropertySummary {
    PropertySummary {
        all_pass: report.all_pass(),
        checks: report.results.len(),
        failed: report.results.iter().filter(|r| !r.pass).map(|r| format!("{}: {}", r.property.as_str(), r.detail)).collect(),
    }
}

fn experiment_step(cfg: &ExperimentConfig, h: &HamiltonianField, art: &mut Artifacts, rec: &mut ResultRecord) -> Result<()> {
    let Some(e) = &cfg.experiment else { return Ok(()) };
    let d = ExperimentParams::default();
    let params = ExperimentParams {
        n_cell: e.n_cell.unwrap_or(d.n_cell),
        tau: e.tau.unwrap_or(d.tau),
        times: e.times.clone().unwrap_or(d.times),
        max_nodes: e.max_nodes.unwrap_or(d.max_nodes),
        hbar_samples: d.hbar_samples,
        alpha: alpha_params(cfg),
    };
    let f = PeriodicFn::cosine_mode(e.amplitude, e.mode, 0.0);
    let report: HomogenizationReport = homogenization_experiment(h, &f, &e.ks, &params).context("homogenization experiment")?;
    art.csv("hj_errors.csv", |buf| Ok(report.write_csv(buf)?))?;
    let plot = Plot {
        title: format!("homogenization error of {}", h.name()),
        x_label: "t".into(),
        y_label: "e_k(t)".into(),
        series: e.ks.iter().map(|&k| Series { label: format!("k = {k}"), points: report.errors(k), markers: true }).collect(),
    };
    art.svg("hj_errors.svg", &plot)?;
    rec.experiment = Some(report.fits);
    Ok(())
}

fn cpm_step(cfg: &ExperimentConfig, h: &HamiltonianField, art: &mut Artifacts, rec: &mut ResultRecord) -> Result<()> {
    let Some(c) = &cfg.cpm else { return Ok(()) };
    let seq = c_pm_iterates(h, c.k_max, c.tau, c.window, &minmax_params(cfg)).context("c± iterates")?;
    art.csv("cpm.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["k", "c_plus_over_k", "c_minus_over_k"])?;
        for (i, k) in seq.k.iter().enumerate() {
            w.write_record([k.to_string(), seq.c_plus_over_k[i].to_string(), seq.c_minus_over_k[i].to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let pts = |v: &[f64]| seq.k.iter().zip(v).map(|(&k, &c)| (k as f64, c)).collect();
    let plot = Plot {
        title: format!("c±(φᵏ)/k for {}", h.name()),
        x_label: "k".into(),
        y_label: "c/k".into(),
        series: vec![
            Series { label: "c₊/k".into(), points: pts(&seq.c_plus_over_k), markers: true },
            Series { label: "c₋/k".into(), points: pts(&seq.c_minus_over_k), markers: true },
        ],
    };
    art.svg("cpm.svg", &plot)?;
    rec.cpm = Some(seq);
    Ok(())
}

fn new_record(cfg: &ExperimentConfig) -> ResultRecord {
    ResultRecord {
        config_hash: cfg.hash(),
        version: VERSION.to_string(),
        config: cfg.clone(),
        outputs: Vec::new(),
        curves: Vec::new(),
        diffs: Vec::new(),
        properties: None,
        experiment: None,
        cpm: None,
        wall_clock_s: 0.0,
    }
}

fn finish(mut rec: ResultRecord, mut art: Artifacts, started: Instant) -> Result<ResultRecord> {
    rec.outputs = art.written.clone();
    rec.outputs.push("manifest.json".into());
    rec.wall_clock_s = started.elapsed().as_secs_f64();
    art.write("manifest.json", |buf| {
        serde_json::to_writer_pretty(&mut *buf, &rec)?;
        buf.push(b'\n');
        Ok(())
    })?;
    Ok(rec)
}

/// Runs every section present in `cfg` and writes the artifacts to `opts.out`.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ResultRecord> {
    let started = Instant::now();
    let h = build_field(cfg)?;
    let mut rec = new_record(cfg);
    let mut art = Artifacts::new(&opts.out, &rec.config_hash)?;
    curves_step(cfg, &h, &mut art, &mut rec, opts.tolerance_scale)?;
    properties_step(cfg, &h, &mut art, &mut rec, opts.tolerance_scale)?;
    experiment_step(cfg, &h, &mut art, &mut rec)?;
    cpm_step(cfg, &h, &mut art, &mut rec)?;
    finish(rec, art, started)
}

/// Runs only the property suite; a config without `[properties]` uses the default suite.
pub fn check(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ResultRecord> {
    let started = Instant::now();
    let mut cfg = cfg.clone();
    cfg.properties.get_or_insert_with(PropertiesSection::default);
    cfg.curves = None;
    cfg.experiment = None;
    cfg.cpm = None;
    let h = build_field(&cfg)?;
    let mut rec = new_record(&cfg);
    let mut art = Artifacts::new(&opts.out, &rec.config_hash)?;
    properties_step(&cfg, &h, &mut art, &mut rec, opts.tolerance_scale)?;
    finish(rec, art, started)
}
