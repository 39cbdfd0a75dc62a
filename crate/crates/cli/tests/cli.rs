use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn incvar(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_incvar"))
        .args(args)
        .current_dir(cwd)
        .env_remove("INCVAR_JOBS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn prokhorov_of_identical_clouds_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.csv"), "u,v\n0.0,1.0\n2.5,-1.0\n3.0,3.0\n").unwrap();
    fs::write(
        dir.path().join("pk.json"),
        r#"{"schema": "incvar.prokhorov/1", "p": "a.csv", "q": "a.csv"}"#,
    )
    .unwrap();
    let out = incvar(&["prokhorov", "--config", "pk.json", "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "0");
    let cert = fs::read_to_string(dir.path().join("res/certificate.json")).unwrap();
    let cert: serde_json::Value = serde_json::from_str(&cert).unwrap();
    assert_eq!(cert["matching"].as_array().unwrap().len(), 3);
}

#[test]
fn prokhorov_reports_separation() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.csv"), "x\n0.0\n").unwrap();
    fs::write(dir.path().join("b.csv"), "x\n0.3\n").unwrap();
    fs::write(
        dir.path().join("pk.json"),
        r#"{"schema": "incvar.prokhorov/1", "p": "a.csv", "q": "b.csv"}"#,
    )
    .unwrap();
    let out = incvar(&["prokhorov", "--config", "pk.json", "--out", "."], dir.path());
    assert!(out.status.success());
    let d: f64 = stdout(&out).trim().parse().unwrap();
    assert!((d - 0.3).abs() < 1e-12);
}

#[test]
fn selftest_passes_on_clean_build() {
    let dir = tempfile::tempdir().unwrap();
    let out = incvar(&["selftest"], dir.path());
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains(", 0 failed"));
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("bad.json"),
        r#"{"schema": "incvar.sweep/1", "scenario": "contamination_sweep",
            "grid": [0.0, 0.1], "levels": {"alpha": 0.5, "beta": 2.0}}"#,
    )
    .unwrap();
    let out = incvar(&["sweep", "--config", "bad.json", "--out", "res"], p);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("levels"), "{}", stderr(&out));
    // nothing is written when validation fails
    assert!(!p.join("res").exists());

    let out = incvar(&["sweep", "--config", "missing.json"], p);
    assert_eq!(out.status.code(), Some(1));
    let out = incvar(&["frobnicate"], p);
    assert_eq!(out.status.code(), Some(1));
    let out = incvar(&["selftest", "--wat"], p);
    assert_eq!(out.status.code(), Some(1));
    let out = incvar(&["--jobs", "0", "selftest"], p);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("gen.json"), r#"{"schema": "incvar.gen/1", "kind": "nominal", "n": 25}"#).unwrap();
    let out = incvar(&["gen", "--config", "gen.json", "--out", "data", "--seed", "11"], p);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(p.join("data/nominal.csv")).unwrap();
    assert_eq!(csv.lines().count(), 26);

    fs::write(
        p.join("fit.json"),
        r#"{"schema": "incvar.fit/1", "data": "data/nominal.csv",
            "model": {"family": "linear", "dim": 1},
            "loss": {"kind": "squared"},
            "levels": {"alpha": 0.1, "beta": 0.9},
            "solver": {"restarts": 2}}"#,
    )
    .unwrap();
    let out = incvar(&["fit", "--config", "fit.json", "--out", "res"], p);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("res/report.json")).unwrap()).unwrap();
    assert_eq!(report["best_theta"]["layout"], "linear");
    assert!(report["best_objective"].as_f64().unwrap().is_finite());

    fs::write(
        p.join("wrong_dim.json"),
        r#"{"schema": "incvar.fit/1", "data": "data/nominal.csv",
            "model": {"family": "linear", "dim": 3},
            "loss": {"kind": "squared"},
            "levels": {"alpha": 0.1, "beta": 0.9}}"#,
    )
    .unwrap();
    let out = incvar(&["fit", "--config", "wrong_dim.json"], p);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("model.dim"));
}

#[test]
fn sweep_output_tree_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("sweep.json"),
        r#"{"schema": "incvar.sweep/1", "scenario": "contamination_sweep",
            "grid": [0.0, 0.2], "n_nominal": 30, "n_contam": 30,
            "solver": {"restarts": 2, "max_outer_iters": 20}}"#,
    )
    .unwrap();
    for (out_dir, jobs) in [("one", "1"), ("two", "3")] {
        let out = incvar(&["--jobs", jobs, "sweep", "--config", "sweep.json", "--out", out_dir, "--seed", "5"], p);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for name in ["contamination_sweep.csv", "contamination_sweep.svg", "metadata.json"] {
        let a = fs::read(p.join("one").join(name)).unwrap();
        let b = fs::read(p.join("two").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
    let csv = fs::read_to_string(p.join("one/contamination_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("one/metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["master_seed"], 5);
}
