use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_psde");

const SMALL: &str = r#"{
  "name": "small",
  "coefficients": { "preset": "example1" },
  "grid": { "t0": 0.0, "h": 0.01, "horizon": 1.0 },
  "ensemble": { "n_paths": 96, "seed": 5 },
  "analyses": ["solve", "dissipativity", "convergence"]
}"#;

fn psde(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("PSDE_OUT_DIR")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn presets_lists_both_examples() {
    let out = psde(&["presets"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["example1", "example2"]);
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.json", SMALL);
    let out = psde(&["validate", &good]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("pass ")).count(), 5);

    let bad = write(dir.path(), "bad.json", &SMALL.replace("\"h\": 0.01", "\"h\": -0.01"));
    let out = psde(&["validate", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4: grid.h"));

    let out = psde(&["validate", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let out_dir = dir.path().join("out");
    let out = psde(&["--out", out_dir.to_str().unwrap(), "--fixed-clock", "run", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["exit_code"], 0);
    assert_eq!(report["wall_time_s"], 0.0);
    for f in ["solve_moments.csv", "dissipativity.csv", "convergence.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let out_dir = dir.path().join("env_out");
    let out = Command::new(BIN)
        .args(["--fixed-clock", "run", &cfg])
        .env("PSDE_OUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(out_dir.join("report.json").exists());
}

#[test]
fn audit_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "audit.json",
        r#"{
  "operator": { "kind": "scalar", "nu": 5.0 },
  "coefficients": {
    "preset": "custom",
    "drift": { "constants": { "a0": 0.0, "lipschitz": 0.1, "growth": 0.1 },
               "terms": [ { "scale": 0.5, "state": "sin" } ] },
    "diffusion": { "constants": { "a0": 0.0, "lipschitz": 0.0, "growth": 0.0 }, "terms": [] }
  },
  "grid": { "h": 0.01, "horizon": 1.0 },
  "ensemble": { "n_paths": 8, "seed": 0 },
  "analyses": ["solve"]
}"#,
    );
    let out = psde(&["--out", dir.path().join("o").to_str().unwrap(), "run", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("audit failed"));
}

#[test]
fn understated_lipschitz_constant_exits_1() {
    // the audit is told to skip the Lipschitz check, so the wrong declaration reaches the bound
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "understated.json",
        r#"{
  "operator": { "kind": "scalar", "nu": 5.0 },
  "coefficients": {
    "preset": "custom",
    "drift": { "constants": { "a0": 0.0, "lipschitz": 0.1, "growth": 3.0 },
               "terms": [ { "scale": 3.0, "state": "sin" } ] },
    "diffusion": { "constants": { "a0": 0.0, "lipschitz": 0.0, "growth": 0.0 }, "terms": [] }
  },
  "grid": { "h": 0.01, "horizon": 3.0 },
  "ensemble": { "n_paths": 64, "seed": 0 },
  "analyses": ["convergence"],
  "options": { "allow_locally_lipschitz": true }
}"#,
    );
    let out = psde(&["--out", dir.path().join("o").to_str().unwrap(), "run", &cfg]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn reports_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let mut reports = Vec::new();
    for threads in ["1", "8"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let out = psde(&[
            "--threads",
            threads,
            "--fixed-clock",
            "--out",
            out_dir.to_str().unwrap(),
            "run",
            &cfg,
        ]);
        assert_eq!(out.status.code(), Some(0));
        reports.push(fs::read(out_dir.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}
