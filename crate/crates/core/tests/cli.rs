//! End-to-end checks of the `obstacle-opt` binary: exit codes, JSON error
//! payloads and artifact layout.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_obstacle-opt"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(cmd)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|e| panic!("stderr not JSON ({e}): {}", String::from_utf8_lossy(&o.stderr)))
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const SMALL: &str = r#"{"grid":{"dim":1,"n":63},"f":"benchmark","phi":"benchmark","z":"manufactured","nu":1e-6,
    "optimizer":{"schedule":[1e-2,1e-3],"max_iterations":60}}"#;

#[test]
fn vi_solve_writes_artifacts_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let out = tmp.path().join("out");
    let o = run("vi-solve", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["exit_code"], 0);
    assert!(summary["converged"].as_bool().unwrap());
    let manifest = read_json(&out.join("manifest.json"));
    let arts: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for a in &arts {
        assert!(out.join(a).exists(), "{a} listed but missing");
    }
    let y = std::fs::read_to_string(out.join("y.csv")).unwrap();
    let row = y.lines().nth(1).unwrap();
    let last = row.rsplit(',').next().unwrap();
    // 17 significant digits: round-trips exactly
    let v: f64 = last.parse().unwrap();
    assert_eq!(format!("{v:.16e}").parse::<f64>().unwrap(), v);
}

#[test]
fn optimize_iterations_csv_header_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run("optimize", &cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(run("optimize", &cfg, &b, &[]).status.code(), Some(0));
    let it = std::fs::read_to_string(a.join("iterations.csv")).unwrap();
    assert_eq!(it.lines().next().unwrap(), "iter,delta,J,tracking,reg,grad_norm,step");
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "timings.json" {
            continue;
        }
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
    let kkt = read_json(&a.join("kkt.json"));
    for e in kkt["entries"].as_array().unwrap() {
        for key in ["name", "value", "tolerance", "pass"] {
            assert!(e.get(key).is_some(), "entry lacks {key}: {e}");
        }
    }
}

#[test]
fn sweep_delta_is_decreasing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let out = tmp.path().join("out");
    let o = run("sweep-delta", &cfg, &out, &["--delta", "1e-1,1e-2,1e-3"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "delta,newton_its,linf_err_vs_vi,h1_err_vs_vi,violation");
    let h1: Vec<f64> = lines.map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(h1.len(), 3);
    assert!(h1.windows(2).all(|w| w[1] < w[0]), "{h1:?}");
}

#[test]
fn missing_state_file_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"grid":{"dim":1,"n":15},"state":{"y":"zero","p":"zero","mu":"file:nowhere.csv","xi":"zero"}}"#,
    );
    let o = run("kkt-audit", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr_json(&o);
    assert_eq!(err["status"], "error");
    assert_eq!(err["field"], "state.mu");
    assert!(err["path"].as_str().unwrap().ends_with("nowhere.csv"));
}

#[test]
fn invalid_values_and_presets_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    let cfg = write_config(tmp.path(), "nu.json", r#"{"grid":{"dim":1,"n":15},"nu":-1}"#);
    let o = run("optimize", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["field"], "nu");

    let cfg = write_config(tmp.path(), "preset.json", r#"{"grid":{"dim":1,"n":15},"phi":"volcano"}"#);
    let o = run("vi-solve", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr_json(&o);
    assert_eq!(err["field"], "phi");
    assert!(!err["available"].as_array().unwrap().is_empty());

    let cfg = write_config(tmp.path(), "syntax.json", "{\n  \"grid\": {\"dim\": 1,\n  }\n}");
    let o = run("vi-solve", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["line"], 3);

    let cfg = write_config(tmp.path(), "delta.json", SMALL);
    let o = run("pen-solve", &cfg, &out, &["--delta", "-3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fixed_point_method_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"grid":{"dim":1,"n":31},"z":"manufactured","nu":1e-2,"anchor":"manufactured",
            "optimizer":{"schedule":[1e-1],"max_iterations":300,"omega_fp":0.5}}"#,
    );
    let out = tmp.path().join("out");
    let o = run("optimize", &cfg, &out, &["--method", "fixed-point"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&out.join("summary.json"))["method"], "fixed-point");
}

#[test]
fn matrix_export() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"grid":{"dim":2,"n":7},"export_matrix":true}"#);
    let out = tmp.path().join("out");
    assert_eq!(run("pen-solve", &cfg, &out, &[]).status.code(), Some(0));
    let mtx = std::fs::read_to_string(out.join("operator.mtx")).unwrap();
    assert!(mtx.starts_with("%%MatrixMarket matrix coordinate real general"));
    let dims: Vec<usize> = mtx
        .lines()
        .find(|l| !l.starts_with('%'))
        .unwrap()
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(&dims[..2], &[49, 49]);
}
