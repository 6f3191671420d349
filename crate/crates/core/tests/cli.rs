use std::path::Path;
use std::process::Command;

use hopflab::geometry::build_grid;
use hopflab::maps::{AnalyticMap, MapField};
use serde_json::Value;

fn hopflab(args: &[&str], out: &Path) -> (i32, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_hopflab")).args(args).arg("--out").arg(out).output().unwrap();
    (o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stdout).into_owned())
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn verification_suites_pass_and_write_results() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["verify-geometry", "verify-forms", "verify-spectral"] {
        let out = dir.path().join(cmd);
        let (code, stdout) = hopflab(&[cmd, "--grid", "12x12"], &out);
        assert_eq!(code, 0, "{cmd}: {stdout}");
        let r = json(&out.join("results.json"));
        assert_eq!(r["passed"], Value::Bool(true));
        assert!(r["checks"].as_array().unwrap().len() > 5);
        let m = json(&out.join("manifest.json"));
        assert_eq!(m["command"], Value::String(cmd.into()));
    }
}

#[test]
fn coarse_grids_skip_unresolved_checks() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout) = hopflab(&["verify-forms", "--grid", "4x6"], dir.path());
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("skipped"));
    let r = json(&dir.path().join("results.json"));
    assert!(r["skipped"].as_u64().unwrap() > 0);
}

#[test]
fn results_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(hopflab(&["gap", "--grid", "12x12", "--trunc", "2", "--samples", "20", "--seed", "4"], d).0, 0);
    }
    for f in ["results.json", "gap.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hopflab(&["energy", "--grid", "8x7"], dir.path()).0, 2);
    assert_eq!(hopflab(&["energy", "--rho", "0"], dir.path()).0, 2);
    assert_eq!(hopflab(&["invariant", "--map", "no-such-map"], dir.path()).0, 2);
    assert_eq!(hopflab(&["coercivity", "--direction", "sideways"], dir.path()).0, 2);
    assert_eq!(hopflab(&["flow", "--perturb", "wobble:1"], dir.path()).0, 2);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "grid = \"8x8\"\nrho = [2.0]\nseed = 9\n").unwrap();
    let out = dir.path().join("o");
    let (code, _) = hopflab(&["energy", "--config", cfg.to_str().unwrap(), "--rho", "1"], &out);
    assert_eq!(code, 0);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config"]["grid"], serde_json::json!([8, 8]));
    assert_eq!(m["config"]["rho"], serde_json::json!([1.0]));
    assert_eq!(m["config"]["seed"], serde_json::json!(9));
}

#[test]
fn invariant_from_csv_and_constant_map() {
    let dir = tempfile::tempdir().unwrap();
    let g = build_grid(10, 10).unwrap();
    let path = dir.path().join("psi.csv");
    MapField::from_analytic(AnalyticMap::parse("conj-hopf").unwrap(), &g).write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    let out = dir.path().join("q");
    let (code, _) = hopflab(&["invariant", "--grid", "10x10", "--trunc", "2", "--map", path.to_str().unwrap()], &out);
    assert_eq!(code, 0);
    let r = json(&out.join("results.json"));
    // Q scales with the square of the degree of the S² map
    assert_eq!(r["q_rounded"], serde_json::json!(1));
    assert!(out.join("q_partial.csv").is_file());
    let out = dir.path().join("c");
    assert_eq!(hopflab(&["invariant", "--grid", "10x10", "--map", "constant"], &out).0, 0);
    assert_eq!(json(&out.join("results.json"))["undefined"], Value::Bool(true));
}

#[test]
fn energy_of_hopf_map() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = hopflab(&["energy", "--grid", "12x12", "--rho", "1"], dir.path());
    assert_eq!(code, 0);
    let r = json(&dir.path().join("results.json"));
    let total = r[0]["total"].as_f64().unwrap();
    assert!((total - 48.0 * std::f64::consts::PI.powi(2)).abs() < 1e-8);
    assert!(r[0]["slack"].as_f64().unwrap().abs() < 1e-8);
}

#[test]
fn short_flow_and_sweep_write_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("flow");
    assert_eq!(hopflab(&["flow", "--grid", "8x8", "--max-iter", "3", "--rho", "0.5,1"], &out).0, 0);
    for f in ["flow_0.csv", "flow_1.csv", "terminal_0.csv", "terminal_1.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let out = dir.path().join("sweep");
    assert_eq!(hopflab(&["sweep", "--grid", "8x8", "--max-iter", "3", "--rho", "1,3"], &out).0, 0);
    let r = json(&out.join("results.json"));
    assert_eq!(r["rows"].as_array().unwrap().len(), 2);
}
