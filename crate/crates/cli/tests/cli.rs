use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn santalo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_santalo"))
        .args(args)
        .env("SANTALO_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn count_files(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
        .count()
}

#[test]
fn sample_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = santalo(&[
        "sample", "VPW2", "--n", "64", "--seed", "7", "--max-iters", "1", "--volume-h", "0.08",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("points.csv")).unwrap();
    assert_eq!(csv.lines().count(), 65);
    assert!(out.join("run.json").is_file());
    assert!(out.join("diagram.svg").is_file());
    assert_eq!(count_files(&out.join("shapes"), "json"), 64);
}

#[test]
fn single_particle_is_a_validation_error() {
    let o = santalo(&["sample", "VPW2", "--n", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("N ≥ 2 required"), "{}", stderr(&o));
}

#[test]
fn unknown_diagram_and_config_keys_are_rejected() {
    let o = santalo(&["sample", "VPX", "--n", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("VPW2"));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"sampler": {"alpah": 1.0}}"#).unwrap();
    let o = santalo(&["sample", "VPW2", "--n", "4", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sampler.alpah"), "{}", stderr(&o));
}

#[test]
fn bad_thread_override_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_santalo"))
        .args(["check", "--module", "functionals"])
        .env("SANTALO_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_prints_torsion_line() {
    let o = santalo(&["check", "--module", "functionals"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("torsion(disk) rel.err ≤ 1e-3: PASS"), "{}", stdout(&o));
}

#[test]
fn export_reproduces_svg_and_overlays_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let base = dir.path().join("base");
    let o = santalo(&[
        "sample", "VPW2", "--n", "4", "--max-iters", "2", "--volume-h", "0.08", "--out", run.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let before = fs::read(run.join("diagram.svg")).unwrap();
    let o = santalo(&["export", "--run", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(before, fs::read(run.join("diagram.svg")).unwrap());

    let o = santalo(&["baseline", "VPW2", "--samples", "200", "--seed", "3", "--out", base.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(base.join("points.csv")).unwrap().lines().count(), 201);
    let o = santalo(&["export", "--run", run.to_str().unwrap(), "--baseline", base.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = fs::read_to_string(run.join("diagram.svg")).unwrap();
    assert!(svg.contains(r#"<g id="baseline" fill="red""#));
    assert_eq!(svg.matches("r=\"1.5\"").count(), 200);
}

#[test]
fn baseline_rejects_pde_diagrams() {
    let o = santalo(&["baseline", "VMU2", "--samples", "5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_square() {
    let dir = tempfile::tempdir().unwrap();
    let o = santalo(&["fit", "square", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    assert!(summary["hausdorff"].as_f64().unwrap() <= 0.02);
    assert_eq!(summary["convex"], serde_json::Value::Bool(true));
}

#[test]
fn missing_run_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = santalo(&["export", "--run", dir.path().join("nope").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run.json"));
}
