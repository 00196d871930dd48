use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cspapi_cli::commands::cmd_pipeline;
use cspapi_cli::{ExperimentConfig, Preset};

fn cspapi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cspapi")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let cfg = r#"{
        "geometry": {"q": 64, "n_r": 32},
        "phantom": {"preset": "nonsparse", "supersample": 2},
        "tv": {"max_iter": 200}
    }"#;
    fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn help_and_usage_errors() {
    assert!(cspapi(&["--help"]).status.success());
    assert_eq!(cspapi(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn infeasible_design_exits_with_two_and_says_so() {
    let dir = tempfile::tempdir().unwrap();
    let out = cspapi(&["design", "--m0", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("design infeasible"));
}

#[test]
fn missing_inputs_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(cspapi(&["reconstruct", "--out", d]).status.code(), Some(3));
    assert_eq!(cspapi(&["evaluate", "--out", d]).status.code(), Some(3));
    assert_eq!(cspapi(&["design", "--config", &format!("{d}/absent.json")]).status.code(), Some(3));
}

#[test]
fn inconsistent_layout_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"geometry": {"n": 60}}"#).unwrap();
    let out = cspapi(&["design", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn stages_run_one_after_another() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = dir.path().join("run");
    let (c, o) = (cfg.to_str().unwrap(), run.to_str().unwrap());
    for stage in ["design", "simulate", "reconstruct"] {
        let out = cspapi(&[stage, "--config", c, "--out", o, "--seed", "3"]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let profile = fs::read_to_string(run.join("sin_profile.csv")).unwrap();
    assert_eq!(profile.lines().count(), 6);
    let report = run.join("report.json");
    let out = cspapi(&["evaluate", report.to_str().unwrap(), report.to_str().unwrap(), "--out", o]);
    assert!(out.status.success());
    let table = fs::read_to_string(run.join("evaluation.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert_eq!(table.lines().next().unwrap().split(',').count(), 7);
}

#[test]
fn seed_changes_the_design() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let c = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(cspapi(&["design", "--config", c, "--out", a.to_str().unwrap(), "--seed", "1"]).status.success());
    assert!(cspapi(&["design", "--config", c, "--out", b.to_str().unwrap(), "--seed", "2"]).status.success());
    let read = |d: &Path| fs::read(d.join("matrix_optimized.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
}

#[test]
fn full_array_never_loses_on_exact_data() {
    for preset in [Preset::Sparse, Preset::Nonsparse] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            output: dir.path().to_path_buf(),
            phantom: cspapi_cli::config::PhantomConfig {
                preset: Some(preset),
                ..Default::default()
            },
            ..Default::default()
        };
        let r = cmd_pipeline(&cfg).unwrap();
        assert!(r.is_valid());
        for v in [r.optimized, r.random] {
            assert!(r.full.rel_image_error <= v.rel_image_error, "{preset:?}: {r:?}");
        }
    }
}
