use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(ws: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_paramstudy"));
    cmd.env_remove("PARAMSTUDY_WORKSPACE").env("RUST_LOG", "warn").arg("--workspace").arg(ws);
    cmd
}

fn demo(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_analyze_optimize_report_on_ridge_demo() {
    let ws = tempfile::tempdir().unwrap();
    let run = bin(ws.path()).args(["run"]).arg(demo("ridge2d.toml")).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout(&run).contains("8 ok of 8 (8 executed, 0 reused)"), "{}", stdout(&run));
    let study = ws.path().join("ridge2d");
    assert!(study.join("study.toml").is_file());

    let again = bin(ws.path()).args(["run"]).arg(demo("ridge2d.toml")).output().unwrap();
    assert!(stdout(&again).contains("(0 executed, 8 reused)"));

    let analyze = bin(ws.path()).arg("analyze").arg(&study).output().unwrap();
    assert!(analyze.status.success());
    assert!(stdout(&analyze).contains("Active direction, ranked by magnitude:"));

    let opt = bin(ws.path()).arg("optimize").arg(&study).output().unwrap();
    assert!(opt.status.success(), "{}", String::from_utf8_lossy(&opt.stderr));
    assert!(stdout(&opt).contains("Optimized inlet_velocity: "));

    let report = bin(ws.path()).arg("report").arg(&study).output().unwrap();
    assert_eq!(stdout(&report), std::fs::read_to_string(study.join("report.txt")).unwrap());
}

#[test]
fn workspace_from_environment() {
    let ws = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_paramstudy"))
        .env("PARAMSTUDY_WORKSPACE", ws.path())
        .args(["--seed", "3", "run"])
        .arg(demo("decay.toml"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = std::fs::read_to_string(ws.path().join("decay/study.toml")).unwrap();
    assert!(written.contains("seed = 3"), "{written}");
}

#[test]
fn optimize_before_analyze_exits_two() {
    let ws = tempfile::tempdir().unwrap();
    let run = bin(ws.path()).arg("run").arg(demo("saturating.toml")).output().unwrap();
    assert!(run.status.success());
    let out = bin(ws.path()).arg("optimize").arg(ws.path().join("saturating")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: missing"));
}

#[test]
fn missing_spec_exits_two() {
    let ws = tempfile::tempdir().unwrap();
    let out = bin(ws.path()).arg("run").arg(ws.path().join("absent.toml")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn parse_prints_a_study_file() {
    let ws = tempfile::tempdir().unwrap();
    let out = bin(ws.path())
        .args(["parse", "Analyze the effect of inlet velocity (from 8 to 12 m/s) on outlet pressure and determine the optimal inlet velocity at which outlet pressure is below 300"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("[[parameters]]"), "{text}");
    assert!(text.contains("lower = 8"), "{text}");
    assert!(text.contains("target = 300"), "{text}");
}

#[test]
fn parse_rejects_prompt_without_parameters() {
    let ws = tempfile::tempdir().unwrap();
    let out = bin(ws.path()).args(["parse", "hello there"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_nominal_is_a_usage_error() {
    let ws = tempfile::tempdir().unwrap();
    let out = bin(ws.path()).args(["parse", "x", "--nominal", "novalue"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
