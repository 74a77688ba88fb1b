use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_convtail"))
}

fn write(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

/// Parses CSV rows after the header.
fn rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse::<f64>().unwrap()).collect())
        .collect()
}

const PARETO2: &str = r#"{"kind":"parametric","family":"pareto","params":[2.0]}"#;
const EXP1: &str = r#"{"kind":"parametric","family":"exponential","params":[1.0]}"#;

#[test]
fn analyze_pareto_passes_with_liminf_two() {
    let d = TempDir::new().unwrap();
    let spec = write(d.path(), "pareto2.json", PARETO2);
    let out = d.path().join("report.json");
    let o = run(&["analyze", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let liminf = r["liminf"]["value"].as_f64().unwrap();
    assert!((liminf - 2.0).abs() < 0.05, "{liminf}");
    assert_eq!(r["horizon"].as_f64(), Some(1e3));
    assert_eq!(r["n_points"].as_u64(), Some(256));
    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    assert!(csv.starts_with("x,log_tail_base,log_tail_conv,bracket,ratio,running_min\n"));
    assert_eq!(rows(&csv).len(), 256);
}

#[test]
fn analyze_counterexample_notes_violated_condition() {
    let d = TempDir::new().unwrap();
    let spec = write(
        d.path(),
        "cx1.json",
        r#"{"kind":"counterexample","variant":1,"gamma_hat":0.001,"n_atoms":8}"#,
    );
    let o = run(&["analyze", spec.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout_json(&o);
    assert_eq!(r["condition2"]["status"], "violated");
    assert_eq!(r["contradictions"], 0);
}

#[test]
fn missing_and_malformed_specs_exit_one() {
    let d = TempDir::new().unwrap();
    let o = run(&["analyze", d.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let bad = write(d.path(), "bad.json", r#"{"kind":"parametric","family":"pareto"}"#);
    let o = run(&["analyze", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("params"));
    let o = run(&["analyze", bad.to_str().unwrap(), "--points", "4"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn convolve_exponential_square_matches_erlang() {
    let d = TempDir::new().unwrap();
    let spec = write(d.path(), "exp1.json", EXP1);
    let o = run(&["convolve", spec.to_str().unwrap(), "--n", "2", "--horizon", "100", "--points", "32"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rs = rows(&String::from_utf8(o.stdout).unwrap());
    assert_eq!(rs.len(), 32);
    for r in rs {
        let (x, ratio) = (r[0], r[4]);
        assert!((ratio / (1.0 + x) - 1.0).abs() < 1e-4, "x={x} ratio={ratio}");
    }
}

#[test]
fn convolve_pair_mode() {
    let d = TempDir::new().unwrap();
    let p = write(d.path(), "pareto2.json", PARETO2);
    let e = write(d.path(), "exp1.json", EXP1);
    let o = run(&["convolve", p.to_str().unwrap(), e.to_str().unwrap(), "--pair", "--points", "32"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rs = rows(&String::from_utf8(o.stdout).unwrap());
    let min = rs.last().unwrap()[5];
    assert!((0.95..=1.3).contains(&min), "{min}");
}

#[test]
fn convolve_once_is_identity() {
    let d = TempDir::new().unwrap();
    let a = write(
        d.path(),
        "atomic2.json",
        r#"{"kind":"atomic","points":[0,1,2],"log_masses":[-1.0986122886681098,-1.0986122886681098,-1.0986122886681098]}"#,
    );
    let o = run(&["convolve", a.to_str().unwrap(), "--n", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rs = rows(&String::from_utf8(o.stdout).unwrap());
    assert!(!rs.is_empty());
    for r in rs {
        assert_eq!(r[1], r[2]);
        assert_eq!(r[4], 1.0);
    }
}

#[test]
fn atom_budget_exits_three() {
    let d = TempDir::new().unwrap();
    let n = 1500;
    let pts: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let lm = vec![format!("{}", -(n as f64).ln()); n];
    let spec = format!(
        r#"{{"kind":"atomic","points":[{}],"log_masses":[{}]}}"#,
        pts.join(","),
        lm.join(",")
    );
    let a = write(d.path(), "big.json", &spec);
    let o = run(&["convolve", a.to_str().unwrap(), "--n", "2"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("atom_budget"));
}

fn tail_at(spec: &Path, xs: &[f64]) -> Vec<f64> {
    let s = convtail::read_spec(spec).unwrap();
    xs.iter().map(|x| s.log_tail(*x).unwrap()).collect()
}

#[test]
fn tilt_round_trip() {
    let d = TempDir::new().unwrap();
    let e = write(d.path(), "exp1.json", EXP1);
    let t1 = d.path().join("t1.json");
    let t2 = d.path().join("t2.json");
    let o = run(&["tilt", e.to_str().unwrap(), "--gamma", "0.5", "--out", t1.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["tilt", t1.to_str().unwrap(), "--gamma", "-0.5", "--out", t2.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let xs = [0.0, 0.5, 3.0, 40.0];
    for (a, b) in tail_at(&e, &xs).iter().zip(tail_at(&t2, &xs)) {
        assert!((a.exp() - b.exp()).abs() < 1e-8);
    }
}

#[test]
fn itail_of_exponential_is_fixed_point() {
    let d = TempDir::new().unwrap();
    let e = write(d.path(), "exp1.json", EXP1);
    let o = run(&["itail", e.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let out = write(d.path(), "it.json", &String::from_utf8(o.stdout).unwrap());
    let xs = [0.0, 1.0, 7.5];
    for (a, b) in tail_at(&e, &xs).iter().zip(tail_at(&out, &xs)) {
        assert!((a.exp() - b.exp()).abs() < 1e-8);
    }
}

#[test]
fn itail_of_weibull_writes_a_reingestable_grid() {
    let d = TempDir::new().unwrap();
    let w = write(d.path(), "w.json", r#"{"kind":"parametric","family":"weibull","params":[1.0,0.5]}"#);
    let o = run(&["itail", w.to_str().unwrap(), "--horizon", "50", "--dx", "0.05"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["kind"], "grid");
    let g = write(d.path(), "g.json", &String::from_utf8(o.stdout).unwrap());
    let back = convtail::read_spec(&g).unwrap();
    let dx = v["dx"].as_f64().unwrap();
    for (k, lt) in v["log_tail"].as_array().unwrap().iter().enumerate().step_by(97) {
        let want = lt.as_f64().unwrap_or(f64::NEG_INFINITY);
        let got = back.log_tail(k as f64 * dx).unwrap();
        assert!(want == got || (want - got).abs() < 1e-12);
    }
}

#[test]
fn hfunc_diagnostics() {
    let d = TempDir::new().unwrap();
    let p = write(d.path(), "pareto2.json", PARETO2);
    let o = run(&["hfunc", p.to_str().unwrap(), "--delta", "0.5", "--levels", "6"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["diagnostics"]["subadd_violations"], 0);
    assert!(v["h"]["breakpoints"].as_array().unwrap().len() >= 3);
}

#[test]
fn counterexample_then_classify() {
    let d = TempDir::new().unwrap();
    let o = run(&["counterexample", "--variant", "1", "--gamma", "0.001", "--atoms", "8"]);
    assert_eq!(code(&o), 0);
    let cx = write(d.path(), "cx.json", &String::from_utf8(o.stdout).unwrap());
    let o = run(&["classify", cx.to_str().unwrap(), "--class", "condition2", "--gamma", "0.001"]);
    assert_eq!(code(&o), 3);
    assert_eq!(stdout_json(&o)["status"], "violated");
    let p = write(d.path(), "pareto2.json", PARETO2);
    let o = run(&["classify", p.to_str().unwrap(), "--class", "S", "--points", "64"]);
    assert_eq!(code(&o), 0);
    let o = run(&["classify", p.to_str().unwrap(), "--class", "nonsense"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn thread_cap_is_honoured() {
    let d = TempDir::new().unwrap();
    let p = write(d.path(), "pareto2.json", PARETO2);
    let o = bin()
        .args(["convolve", p.to_str().unwrap(), "--points", "16"])
        .env("CONVTAIL_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let o = bin()
        .args(["convolve", p.to_str().unwrap()])
        .env("CONVTAIL_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}
