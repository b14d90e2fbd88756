use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gridstab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridstab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("GRIDSTAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn eigs_zero_droop_margin_is_filter_pole() {
    let dir = tempfile::tempdir().unwrap();
    let out = gridstab(&["eigs", "--preset", "case1", "--kp", "0", "--kv", "0"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json(&dir.path().join("eigs.json"));
    assert!((doc["margin"].as_f64().unwrap() + 75.4).abs() < 1e-9);
    assert_eq!(doc["eigenvalues"].as_array().unwrap().len(), 9);
    assert_eq!(doc["zero_mode_present"], Value::Bool(true));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["command"], "eigs");
    assert_eq!(report["inputs_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = gridstab(&["sweep", "--preset", "case2", "--kp-steps", "10", "--kv-steps", "10"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "kp,kv,omega_f,margin,zero_mode,complex_pairs");
    assert_eq!(lines.len(), 101);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 6 && l.split(',').nth(4) == Some("true")));
}

#[test]
fn sweep_is_deterministic_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["sweep", "--preset", "case1", "--kp-steps", "4", "--kv-steps", "3", "--wf", "50,75.4"];
    gridstab(&args, a.path());
    let out = Command::new(env!("CARGO_BIN_EXE_gridstab"))
        .args(args)
        .arg("--out")
        .arg(b.path())
        .env("GRIDSTAB_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    let ra = fs::read(a.path().join("sweep.csv")).unwrap();
    assert_eq!(ra, fs::read(b.path().join("sweep.csv")).unwrap());
    assert_eq!(String::from_utf8(ra).unwrap().lines().count(), 25);
}

#[test]
fn simulate_zero_duration_is_a_single_equilibrium_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = gridstab(&["simulate", "--preset", "case1", "--duration", "0"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), 13);
    let f1: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((f1 - 60.0).abs() < 1e-9);
}

#[test]
fn simulate_with_epll_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["simulate", "--preset", "case1", "--duration", "0.6", "--epll-bus", "2"];
    assert!(gridstab(&args, a.path()).status.success());
    assert!(gridstab(&args, b.path()).status.success());
    for name in ["trace.csv", "epll_bus2.csv", "trace_meta.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let meta = json(&a.path().join("trace_meta.json"));
    assert_eq!(meta["samples"], 6001);
    assert_eq!(meta["events"].as_array().unwrap().len(), 2);
    assert_eq!(meta["events"][0]["step"], 5000);
    let epll = fs::read_to_string(a.path().join("epll_bus2.csv")).unwrap();
    let last: Vec<f64> = epll.lines().last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((last[3] - 60.0).abs() < 0.05, "{last:?}");
}

#[test]
fn verify_passes_and_flipped_convention_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ok = gridstab(&["verify", "--preset", "case2"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert_eq!(json(&dir.path().join("verify.json"))["passed"], Value::Bool(true));
    let flipped = gridstab(&["verify", "--preset", "case2", "--flip-convention"], dir.path());
    assert_eq!(flipped.status.code(), Some(2));
    let doc = json(&dir.path().join("verify.json"));
    assert_eq!(doc["passed"], Value::Bool(false));
    let fd = doc["checks"].as_array().unwrap().iter().find(|c| c["name"] == "fd_jacobian_spectrum").unwrap();
    assert_eq!(fd["passed"], Value::Bool(false));
}

#[test]
fn epll_command_reports_tracking() {
    let dir = tempfile::tempdir().unwrap();
    let out = gridstab(&["epll", "--preset", "case1", "--amp-step", "0.1", "--freq-step-hz", "0"], dir.path());
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["summary"]["amplitude_settle_0p1pct_s"].as_f64().unwrap() < 0.06);
    let csv = fs::read_to_string(dir.path().join("epll_trace.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,x,a_hat,omega_hat_hz,phi_hat,e");
    assert_eq!(csv.lines().count(), 10_002);
}

#[test]
fn config_file_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("case.json");
    fs::write(&path, gridstab::presets::case2().to_json()).unwrap();
    let from_file = gridstab(&["eigs", "--config", path.to_str().unwrap()], &dir.path().join("a"));
    let from_preset = gridstab(&["eigs", "--preset", "case2"], &dir.path().join("b"));
    assert!(from_file.status.success() && from_preset.status.success());
    assert_eq!(fs::read(dir.path().join("a/eigs.json")).unwrap(), fs::read(dir.path().join("b/eigs.json")).unwrap());

    fs::write(&path, r#"{"schema": "1", "network": {"rated_voltage_ll": 480, "lines": [], "bogus": 1}, "inverters": []}"#).unwrap();
    let bad = gridstab(&["eigs", "--config", path.to_str().unwrap()], &dir.path().join("c"));
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bogus"));

    let both = gridstab(&["eigs", "--preset", "case1", "--config", path.to_str().unwrap()], &dir.path().join("d"));
    assert!(!both.status.success());
}
