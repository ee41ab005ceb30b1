use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_CURVES: &str = r#"
seed = 7

[preset]
name = "pendulum"

[grid]
n_q = 32
n_p = 41

[curves]
backends = ["levelset", "weakkam", "minmax"]
k = 2
p_min = -1.0
p_max = 1.0
n_p = 5

[weakkam]
horizon = 20.0
tau = 0.02
n_q = 128
"#;

const SMALL_PROPERTIES: &str = r#"
[preset]
name = "pendulum"

[grid]
n_q = 32
n_p = 41

[properties]
k = 1
pgrid = [-1.0, 1.0, 5]
lipschitz_pairs = 3
sandwich_trials = 2
"#;

fn effham(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_effham"));
    cmd.args(args).env_remove("EFFHAM_OUT");
    if let Some(dir) = env_out {
        cmd.env("EFFHAM_OUT", dir);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn run_into(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    effham(&args, None)
}

#[test]
fn run_writes_stamped_artifacts_for_every_backend() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "curves.toml", SMALL_CURVES);
    let out = tmp.path().join("out");
    let o = run_into(&cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let m = manifest(&out);
    let hash = m["config_hash"].as_str().unwrap().to_string();
    let version = m["version"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
    assert!(m["wall_clock_s"].as_f64().unwrap() >= 0.0);

    let stamp = format!("config_hash={hash}, version={version}");
    let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for name in ["hbar_levelset.csv", "hbar_weakkam.csv", "hbar_minmax.csv", "diff_table.csv", "hbar.svg", "manifest.json"] {
        assert!(outputs.contains(&name), "{name} missing from {outputs:?}");
    }
    for name in outputs.iter().filter(|n| **n != "manifest.json") {
        let text = fs::read_to_string(out.join(name)).unwrap();
        assert!(text.contains(&stamp), "{name} lacks the config stamp");
    }
    let svg = fs::read_to_string(out.join("hbar.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert_eq!(m["diffs"].as_array().unwrap().len(), 3);
}

#[test]
fn identical_config_reproduces_payload_bytes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "curves.toml", SMALL_CURVES);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run_into(&cfg, &a, &[])), 0);
    assert_eq!(code(&run_into(&cfg, &b, &["--threads", "1"])), 0);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in &names {
        if name == "manifest.json" {
            continue;
        }
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name:?} differs");
    }
    let (mut ma, mut mb) = (manifest(&a), manifest(&b));
    ma.as_object_mut().unwrap().remove("wall_clock_s");
    mb.as_object_mut().unwrap().remove("wall_clock_s");
    assert_eq!(ma, mb);

    let d = effham(&["diff", a.to_str().unwrap(), b.to_str().unwrap()], None);
    assert_eq!(code(&d), 0);
    let table = String::from_utf8_lossy(&d.stdout);
    assert!(!table.contains("EXCEEDS"));
    assert!(table.lines().skip(1).all(|l| l.contains(" 0.0000e0 ")), "{table}");
}

#[test]
fn weakkam_agrees_with_levelset_within_tolerance() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "curves.toml", SMALL_CURVES);
    let out = tmp.path().join("out");
    assert_eq!(code(&run_into(&cfg, &out, &[])), 0);
    let (w, l) = (out.join("hbar_weakkam.csv"), out.join("hbar_levelset.csv"));
    let o = effham(&["diff", w.to_str().unwrap(), l.to_str().unwrap(), "--tolerance", "1e-2"], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));

    // Minmax against levelset is judged by the curves' combined error estimate.
    let mm = out.join("hbar_minmax.csv");
    let o = effham(&["diff", mm.to_str().unwrap(), l.to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn diff_flags_differences_and_schema_mismatches() {
    let tmp = TempDir::new().unwrap();
    let a = write_config(&tmp, "a.csv", "# error_estimate=0\np,h\n0,1\n1,2\n");
    let b = write_config(&tmp, "b.csv", "# error_estimate=0\np,h\n0,1\n1,2.5\n");
    let c = write_config(&tmp, "c.csv", "p,h\n0,1\n2,2\n");
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();

    let o = effham(&["diff", &s(&a), &s(&b)], None);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("EXCEEDS"));
    assert_eq!(code(&effham(&["diff", &s(&a), &s(&b), "--tolerance", "0.5"], None)), 0);
    assert_eq!(code(&effham(&["diff", &s(&a), &s(&b), "--tolerance", "0.25", "--tolerance-scale", "2"], None)), 0);

    let o = effham(&["diff", &s(&a), &s(&c)], None);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("schema mismatch"), "{}", stderr(&o));
}

#[test]
fn malformed_config_exits_1_naming_the_violation() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cases = [
        ("[preset]\nname = \"pendulum\"\ncolour = 3\n", "colour"),
        ("[preset]\nname = \"pendulum\"\n[curves]\nbackends = [\"levelset\"]\nk = 7\n", "curves.k"),
        ("[preset]\nname = \"pendulum\"\n[curves]\nbackends = [\"simplex\"]\n", "simplex"),
        ("[grid]\nn_q = 8\n", "preset"),
    ];
    for (i, (text, needle)) in cases.iter().enumerate() {
        let cfg = write_config(&tmp, &format!("bad{i}.toml"), text);
        let o = run_into(&cfg, &out, &[]);
        assert_eq!(code(&o), 1, "{text}");
        assert!(stderr(&o).contains(needle), "{text}: {}", stderr(&o));
    }
    assert!(!out.exists(), "nothing is written for an invalid config");
}

#[test]
fn unsupported_backend_surfaces_a_remediation_hint() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", "[preset]\nname = \"modulated_bump\"\n[grid]\nn_q = 16\nn_p = 9\n[curves]\nbackends = [\"levelset\"]\n");
    let o = run_into(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("cannot process") && err.contains("hint:"), "{err}");
}

#[test]
fn check_passes_and_tiny_budgets_fail_with_exit_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "p.toml", SMALL_PROPERTIES);
    let ok = tmp.path().join("ok");
    let o = effham(&["check", cfg.to_str().unwrap(), "--out", ok.to_str().unwrap(), "--seed", "7"], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ok.join("properties.json")).unwrap()).unwrap();
    let results = report["payload"]["results"].as_array().unwrap();
    assert!(results.len() >= 7);
    assert!(results.iter().all(|r| r["pass"] == true));
    assert_eq!(report["config_hash"], manifest(&ok)["config_hash"]);

    let bad = tmp.path().join("bad");
    let o = effham(&["check", cfg.to_str().unwrap(), "--out", bad.to_str().unwrap(), "--tolerance-scale", "1e-12"], None);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn seed_flag_enters_the_config_hash() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "p.toml", SMALL_PROPERTIES);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();
    assert_eq!(code(&effham(&["check", &s(&cfg), "--out", &s(&a), "--seed", "1"], None)), 0);
    assert_eq!(code(&effham(&["check", &s(&cfg), "--out", &s(&b), "--seed", "2"], None)), 0);
    assert_ne!(manifest(&a)["config_hash"], manifest(&b)["config_hash"]);
    assert_eq!(manifest(&a)["config"]["seed"], 1);
}

#[test]
fn output_directory_precedence() {
    let tmp = TempDir::new().unwrap();
    let text = format!("output_dir = \"{}\"\n{SMALL_PROPERTIES}", tmp.path().join("from_config").display());
    let cfg = write_config(&tmp, "p.toml", &text);
    let env_dir = tmp.path().join("from_env");
    let flag_dir = tmp.path().join("from_flag");

    assert_eq!(code(&effham(&["check", cfg.to_str().unwrap()], None)), 0);
    assert!(tmp.path().join("from_config/manifest.json").exists());

    assert_eq!(code(&effham(&["check", cfg.to_str().unwrap()], Some(&env_dir))), 0);
    assert!(env_dir.join("manifest.json").exists());

    assert_eq!(code(&effham(&["check", cfg.to_str().unwrap(), "--out", flag_dir.to_str().unwrap()], Some(&env_dir))), 0);
    assert!(flag_dir.join("manifest.json").exists());
}

#[test]
fn list_presets_as_json() {
    let o = effham(&["list-presets", "--json"], None);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let names: Vec<&str> = v.as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"pendulum") && names.contains(&"bump_in_p"));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            effham_cli::config::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}
