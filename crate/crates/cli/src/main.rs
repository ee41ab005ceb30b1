use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use effham::domain::PresetCatalog;
use effham_cli::config::{ConfigError, ExperimentConfig};
use effham_cli::diff::{diff_paths, render, DiffError};
use effham_cli::run::{check, run, ResultRecord, RunOptions};

/// Exit status when a numerical check (property suite or diff tolerance) fails.
const EXIT_CHECK_FAILED: u8 = 2;
const DEFAULT_OUT: &str = "effham-out";

#[derive(Parser, Debug)]
#[command(name = "effham", version, about = "Effective Hamiltonians by min-max, weak KAM and level-set routes")]
struct Cli {
    /// Seed of the randomized property inputs; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; takes precedence over EFFHAM_OUT and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Multiplies every comparison budget and tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    tolerance_scale: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every section of a config and write its artifacts.
    Run { config: PathBuf },
    /// Run only the property suite of a config.
    Check { config: PathBuf },
    /// Compare two result directories or two result tables.
    Diff {
        a: PathBuf,
        b: PathBuf,
        /// Absolute tolerance on the sup difference (default: sum of the curves' error estimates, or 0).
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// List the available Hamiltonian presets.
    ListPresets {
        #[arg(long)]
        json: bool,
    },
}

fn output_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("EFFHAM_OUT").filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn load(cli: &Cli, path: &Path) -> Result<(ExperimentConfig, RunOptions)> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let opts = RunOptions { out: output_dir(cli, &cfg), tolerance_scale: cli.tolerance_scale };
    Ok((cfg, opts))
}

fn report_run(rec: &ResultRecord, out: &Path) -> u8 {
    println!("config_hash {}", rec.config_hash);
    for d in &rec.diffs {
        println!(
            "{:>10} vs {:<10} sup {:.3e}  l1 {:.3e}  budget {:.3e}  {}",
            d.a,
            d.b,
            d.sup,
            d.l1,
            d.budget,
            if d.within_budget { "within budget" } else { "OVER BUDGET" }
        );
    }
    if let Some(fits) = &rec.experiment {
        for f in fits {
            println!("k = {:<3} epsilon_k {:.4e}  fit residual {:.1}%", f.k, f.epsilon, 100.0 * f.residual);
        }
    }
    if let Some(c) = &rec.cpm {
        println!("c+/k {:?}  c-/k {:?}", c.c_plus_over_k, c.c_minus_over_k);
    }
    if let Some(p) = &rec.properties {
        println!("properties: {}/{} pass", p.checks - p.failed.len(), p.checks);
        for f in &p.failed {
            println!("  FAIL {f}");
        }
    }
    println!("wrote {} files to {} in {:.1} s", rec.outputs.len(), out.display(), rec.wall_clock_s);
    if rec.properties_failed() {
        EXIT_CHECK_FAILED
    } else {
        0
    }
}

fn list_presets(json: bool) -> Result<u8> {
    let presets = PresetCatalog::list();
    if json {
        println!("{}", serde_json::to_string_pretty(&presets)?);
        return Ok(0);
    }
    for p in presets {
        let params: Vec<String> = p.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let tag = if p.time_dependent { " [time-dependent]" } else { "" };
        println!("{:<18} {:<22} {}{tag}", p.name, params.join(" "), p.description);
    }
    Ok(0)
}

fn execute(cli: &Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the worker pool")?;
    }
    if !(cli.tolerance_scale.is_finite() && cli.tolerance_scale > 0.0) {
        anyhow::bail!("--tolerance-scale must be positive, got {}", cli.tolerance_scale);
    }
    match &cli.command {
        Command::Run { config } => {
            let (cfg, opts) = load(cli, config)?;
            let rec = run(&cfg, &opts)?;
            Ok(report_run(&rec, &opts.out))
        }
        Command::Check { config } => {
            let (cfg, opts) = load(cli, config)?;
            let rec = check(&cfg, &opts)?;
            Ok(report_run(&rec, &opts.out))
        }
        Command::Diff { a, b, tolerance } => {
            let diffs = diff_paths(a, b, *tolerance, cli.tolerance_scale)?;
            print!("{}", render(&diffs));
            Ok(if diffs.iter().all(|d| d.pass) { 0 } else { EXIT_CHECK_FAILED })
        }
        Command::ListPresets { json } => list_presets(*json),
    }
}

fn hint(err: &anyhow::Error) -> Option<&'static str> {
    for cause in err.chain() {
        if let Some(effham::Error::BackendInvalid { .. }) = cause.downcast_ref::<effham::Error>() {
            return Some("levelset needs H = p^2/2 - V(q), weakkam needs H convex in p, minmax accepts any H with k in 1..=4");
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return Some("see the configuration schema in README.md");
        }
        if cause.downcast_ref::<DiffError>().is_some() {
            return Some("diff compares results of the same shape: matching tables, columns and key values");
        }
    }
    None
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            if let Some(h) = hint(&err) {
                eprintln!("hint: {h}");
            }
            ExitCode::from(1)
        }
    }
}
