use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cusp-torsion"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

/// Writes `body` to a fresh file in the target temp dir and returns its path.
fn config(name: &str, body: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, body).unwrap();
    path
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn constants_reparse_with_frozen_values() {
    let out = run(&["constants"]);
    assert!(out.status.success());
    let v = json(&out);
    assert!((v["c_0"].as_f64().unwrap() - 0.676_192_491_607_541_8).abs() < 1e-10);
    assert!((v["zeta_prime_minus1"].as_f64().unwrap() + 0.165_421_143_700_450_93).abs() < 1e-10);
    assert!((v["ln_Zp_P_1"].as_f64().unwrap() - 1.946_356_025_563_036_6).abs() < 1e-10);
    assert!(v.get("literal_constant_term").is_none());
    let literal = json(&run(&["constants", "--paper-constants"]));
    assert!(literal["literal_constant_term"].is_object());
}

#[test]
fn psi_check_passes_and_tight_tolerance_fails() {
    assert_eq!(run(&["psi-check"]).status.code(), Some(0));
    assert_eq!(
        run(&["psi-check", "--tol", "1e-300"]).status.code(),
        Some(3)
    );
}

#[test]
fn triplicated_reference_trace_vanishes() {
    let cfg = config("triplicate", r#"{"provider": "reference_triplicate"}"#);
    let out = run(&[
        "trace",
        "--config",
        cfg.to_str().unwrap(),
        "--t-grid",
        "0.1:10:5",
        "--header",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,trace"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r[1].abs() < 1e-12));
}

#[test]
fn flat_torus_torsion_matches_closed_form() {
    let cfg = config("torus", r#"{"provider": "flat_torus"}"#);
    let v = json(&run(&["torsion", "--config", cfg.to_str().unwrap()]));
    assert!((v["zeta_prime_0"].as_f64().unwrap() - 0.361_541_100_435_726_6).abs() < 1e-4);
}

#[test]
fn cusp_limit_exit_code_tracks_tolerance() {
    let cfg = config("cusp_limit", r#"{"mode": "cusp_limit", "h_prime": [2, 0]}"#);
    let path = cfg.to_str().unwrap();
    assert_eq!(
        run(&["anomaly", "--config", path, "--theta", "1e-3", "--tol", "0.2"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        run(&["anomaly", "--config", path, "--theta", "1e-3", "--tol", "0.01"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn bad_input_exits_two() {
    assert_eq!(run(&["trace"]).status.code(), Some(2));
    assert_eq!(
        run(&["trace", "--config", "/nonexistent/cfg.json"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["kernel", "--t-grid", "1:0:3"]).status.code(), Some(2));
    assert_eq!(run(&["flatten", "--theta", "0.5"]).status.code(), Some(2));
    let bad = config("bad_provider", r#"{"provider": "nowhere"}"#);
    assert_eq!(
        run(&["trace", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    let out = bin()
        .arg("constants")
        .env("CUSP_TORSION_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_is_byte_identical_across_runs_and_thread_counts() {
    let cfg = config("kernel", r#"{"u1": [0.1, 0.0], "u2": [0.05, 0.02]}"#);
    let args = [
        "kernel",
        "--config",
        cfg.to_str().unwrap(),
        "--t-grid",
        "0.05:2:6",
    ];
    let one = bin()
        .args(args)
        .env("CUSP_TORSION_THREADS", "1")
        .output()
        .unwrap();
    let again = bin()
        .args(args)
        .env("CUSP_TORSION_THREADS", "1")
        .output()
        .unwrap();
    let many = bin()
        .args(args)
        .env("CUSP_TORSION_THREADS", "4")
        .output()
        .unwrap();
    assert!(one.status.success());
    assert_eq!(one.stdout, again.stdout);
    assert_eq!(one.stdout, many.stdout);
}

#[test]
fn out_flag_writes_file() {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("constants_out.json");
    let _ = std::fs::remove_file(&path);
    let out = run(&["constants", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(v["c_1"].as_f64().is_some());
}

#[test]
fn tight_flattening_reports_sandwich() {
    let cfg = config("tight", r#"{"kind": "tight", "n": 0, "samples": 500}"#);
    let out = run(&[
        "flatten",
        "--config",
        cfg.to_str().unwrap(),
        "--theta",
        "1e-2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(json(&out)[0]["sandwich"]["holds"], Value::Bool(true));
}
