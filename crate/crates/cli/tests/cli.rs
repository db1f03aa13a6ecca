use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sparsereg_cli::ExperimentConfig;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsereg"))
        .args(args)
        .env_remove("SPARSEREG_THREADS")
        .output()
        .expect("binary runs")
}

fn run_config(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

const SMALL: &str = r#"
[problem]
kind = "diagonal"
n = 24
sparsity = 2
p = 2
seed = 3

[penalty]
q = 1.5

[sweep]
delta_min = 1e-3
delta_max = 1e-1
count = 5
trials = 2
"#;

#[test]
fn exact_recovery_through_solve() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config("solve", &configs().join("l1_exact.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("report.json"));
    assert!(report["max_coefficient_error"].as_f64().unwrap() <= 1e-6);
    assert_eq!(report["converged"], Value::Bool(true));
    let csv = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    assert!(csv.starts_with("index,u_dagger,u_alpha\n"));
    assert_eq!(csv.lines().count(), 65);
}

#[test]
fn p1_residual_within_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config("solve", &configs().join("l1_exact.toml"), dir.path(), &["--delta", "0.1"]);
    assert_eq!(out.status.code(), Some(0));
    let report = json(&dir.path().join("report.json"));
    let alpha = report["alpha"].as_f64().unwrap();
    let beta2 = report["certificate_beta2"].as_f64().unwrap();
    assert!(alpha * beta2 < 1.0);
    let bound = 0.1 * (1.0 + alpha * beta2) / (1.0 - alpha * beta2);
    assert!(report["residual_norm"].as_f64().unwrap() <= bound);
    assert!((report["residual_bound"].as_f64().unwrap() - bound).abs() < 1e-15);
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[problem]\nkind = \"diagonal\"\nn = 8\nsparsity_level = 2\n");
    let out = run_config("solve", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sparsity_level"), "{err}");

    let cfg = write_config(dir.path(), "[problem]\nkind = \"diagonal\"\nn = \"eight\"\n");
    let out = run_config("check", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n"));
}

#[test]
fn empty_delta_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("count = 5", "count = 0"));
    let out = run_config("sweep", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sweep.count"));
}

#[test]
fn too_few_points_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("count = 5", "count = 3"));
    let out = run_config("sweep", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("sweep.csv").exists());
    assert_eq!(json(&dir.path().join("rate.json"))["rate"], Value::Null);
}

#[test]
fn nonconvergence_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[solve]\ndelta = 0.01\nmax_iter = 2\n");
    let cfg = write_config(dir.path(), &text);
    let out = run_config("solve", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_reference_diagonal_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config("check", &configs().join("l1_rate.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("check.json"));
    assert_eq!(report["passed"], Value::Bool(true));
    assert_eq!(report["conditions"]["fbi"]["injective"], Value::Bool(true));
    let stdout: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stdout, report);
}

#[test]
fn check_rank_deficient_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config("check", &configs().join("rank_deficient.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
    let report = json(&dir.path().join("check.json"));
    assert_eq!(report["conditions"]["fbi"]["injective"], Value::Bool(false));
    assert_eq!(report["conditions"]["fbi"]["sigma_min"].as_f64().unwrap(), 0.0);
}

#[test]
fn check_toy_nonlinear_sampled_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config("check", &configs().join("toy_nonlinear.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("check.json"));
    assert_eq!(report["conditions"]["sampled"]["passed"], Value::Bool(true));
    assert!(report["conditions"]["sampled"]["gamma2"].as_f64().is_some());
}

#[test]
fn sweep_artifacts_are_deterministic() {
    let cfg = configs().join("q15_rate.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run_config("sweep", &cfg, a.path(), &[]).status.code(), Some(0));
    assert_eq!(run_config("sweep", &cfg, b.path(), &["--threads", "1"]).status.code(), Some(0));
    for name in ["sweep.csv", "rate.json", "rate.svg"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
    let csv = std::fs::read_to_string(a.path().join("sweep.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "delta,alpha,trial,error_norm,residual_norm,err_bound,residual_bound,iterations,converged"
    );
    assert_eq!(csv.lines().count(), 1 + 10 * 5);
    let rate = json(&a.path().join("rate.json"));
    assert!((rate["reference_slope"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(rate["bound_violations"].as_u64(), Some(0));
}

#[test]
fn seed_and_thread_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let base = dir.path().join("base");
    let seeded = dir.path().join("seeded");
    let env_threads = dir.path().join("env");
    assert_eq!(run_config("sweep", &cfg, &base, &[]).status.code(), Some(0));
    assert_eq!(run_config("sweep", &cfg, &seeded, &["--seed", "99"]).status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_sparsereg"))
        .args(["sweep", "--config", cfg.to_str().unwrap(), "--out", env_threads.to_str().unwrap()])
        .env("SPARSEREG_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let read = |d: &Path| std::fs::read_to_string(d.join("sweep.csv")).unwrap();
    assert_ne!(read(&base), read(&seeded));
    assert_eq!(read(&base), read(&env_threads));

    let out = run_config("sweep", &cfg, &base, &["--threads", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn output_dir_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[output]\ndir = \"{}\"\n", dir.path().join("from_cfg").display());
    let cfg = write_config(dir.path(), &text);
    let out = run(&["check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("from_cfg").join("check.json").exists());
}

#[test]
fn reference_configs_round_trip() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let cfg = ExperimentConfig::parse(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again, "{}", path.display());
        seen += 1;
    }
    assert!(seen >= 6);
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["solve"]).status.code(), Some(1));
    let missing = run(&["check", "--config", "/nonexistent/config.toml"]);
    assert_eq!(missing.status.code(), Some(1));
}
