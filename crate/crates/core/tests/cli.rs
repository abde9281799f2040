//! End-to-end runs of the `cmc-glue` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cmc_glue::matching::solve_scale;
use serde_json::Value;

fn run(dir: &Path, args: &[&str], config: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cmc-glue"));
    cmd.args(args).arg("--out").arg(dir.join("out"));
    if let Some(text) = config {
        let path = dir.join("run.cfg");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out").join(name)).unwrap()).unwrap()
}

fn failed_checks(report: &Value) -> Vec<String> {
    report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| !c["passed"].as_bool().unwrap())
        .map(|c| c["name"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn default_configuration_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["verify"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(dir.path(), "verify.json");
    assert_eq!(report["passed"], Value::Bool(true));
    assert_eq!(report["construction"], "delaunay");
    let names: Vec<&str> = report["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    for expected in ["block_counts", "neck_matching", "oracle_agreement", "jacobi_fields", "embedded", "error_scaling"] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
}

#[test]
fn verify_report_has_stable_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["verify"], Some("construction = handle\nresolution = 16\n"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(dir.path(), "verify.json");
    let mut keys: Vec<&String> = report.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(keys, ["checks", "construction", "n", "passed"]);
    for c in report["checks"].as_array().unwrap() {
        let mut keys: Vec<&String> = c.as_object().unwrap().keys().collect();
        keys.sort();
        assert_eq!(keys, ["actual", "expected", "name", "passed", "relation", "tolerance"]);
    }
}

#[test]
fn spoiled_neck_scale_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["verify"], Some("eps_factor = 1.5\nresolution = 32\n"));
    assert_eq!(out.status.code(), Some(1));
    let failed = failed_checks(&json(dir.path(), "verify.json"));
    assert!(failed.contains(&"neck_matching".to_string()), "{failed:?}");
    assert!(failed.contains(&"error_scaling".to_string()), "{failed:?}");
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for (args, config) in [
        (&["verify"][..], Some("construction = two_geodesic\nN = 8\n")),
        (&["build"][..], Some("colour = blue\n")),
        (&["build"][..], Some("tau = nan\n")),
        (&["build"][..], Some("delta = 1\n")),
        (&["build"][..], Some("tau = 0.2\n")),
        (&["verify"][..], Some("sampling = skeleton\n")),
        (&["balance"][..], None),
        (&["sweep", "--steps", "2"][..], None),
        (&["export", "--format", "stl"][..], None),
        (&["frobnicate"][..], None),
    ] {
        let out = run(dir.path(), args, config);
        assert_eq!(out.status.code(), Some(2), "{args:?} {config:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn manifest_records_the_solved_scale() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["build"], Some("n = 3\nN = 7\ntau = 0.005\nresolution = 12\n"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(dir.path(), "manifest.json");
    let alpha = m["alpha_sphere"].as_f64().unwrap();
    let expected = solve_scale(3, alpha, 0.005).unwrap();
    assert!((m["eps"].as_f64().unwrap() / expected - 1.0).abs() < 1e-14);
    assert_eq!(m["N"], 7);
    assert_eq!(m["necks"], 7);
    assert_eq!(m["eps_bar_k"].as_array().unwrap().len(), 7);
    // n = 3 surfaces are exported as meridian profiles.
    let csv = fs::read_to_string(dir.path().join("out/surface.csv")).unwrap();
    assert!(csv.starts_with("param,"));
}

#[test]
fn exports_each_format() {
    let dir = tempfile::tempdir().unwrap();
    for (format, file, head) in [("obj", "surface.obj", "#"), ("ply", "surface.ply", "ply"), ("csv", "surface.csv", "param")] {
        let out = run(dir.path(), &["export", "--format", format], Some("resolution = 8\n"));
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let text = fs::read_to_string(dir.path().join("out").join(file)).unwrap();
        assert!(text.starts_with(head), "{format}: {}", &text[..40.min(text.len())]);
    }
}

#[test]
fn sweep_is_monotone_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["sweep", "--tau-min", "0.002", "--tau-max", "0.02", "--steps", "4"];
    let config = Some("resolution = 32\n");
    assert_eq!(run(dir.path(), &args, config).status.code(), Some(0));
    let first = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(run(dir.path(), &args, config).status.code(), Some(0));
    let second = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(first, second);

    let mut lines = first.lines();
    assert_eq!(lines.next(), Some("tau,eps,rho_eps,norm,neck,transition,exterior,status"));
    let rows: Vec<Vec<&str>> = lines.clone().filter(|l| !l.starts_with('#')).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let eps: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(eps.windows(2).all(|w| w[1] > w[0]), "{eps:?}");
    assert!(rows.iter().all(|r| r[7] == "ok"));
    let slope: f64 = first.lines().find_map(|l| l.strip_prefix("# slope,")).unwrap().parse().unwrap();
    assert!((slope / 1.875 - 1.0).abs() < 0.15, "slope {slope}");
}

#[test]
fn balance_reports_the_derivative_pattern_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["balance"], Some("construction = two_geodesic\n"));
    // The measured derivative is tridiagonal rather than the cyclic pattern,
    // so this run fails by design; the other checks hold.
    assert_eq!(out.status.code(), Some(1));
    let report = json(dir.path(), "balance.json");
    assert_eq!(failed_checks(&report), ["derivative_pattern"]);
    // One flux per neck of the first chain; one row per free displacement.
    assert_eq!(report["balance"]["flux"].as_array().unwrap().len(), 10);
    let matrix = report["derivative"]["matrix"].as_array().unwrap();
    assert_eq!(matrix.len(), 2);
    assert!(matrix.iter().all(|row| row.as_array().unwrap().len() == 2));
}
