mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use amrplan::cli::{run, Command, RunArgs};
use amrplan::scenario::Decision;
use amrplan::solver::{parse_lp, solve_milp, SolveOptions};
use common::workspace_file;
use serde_json::Value;

fn args(scenario: &str, out: &Path) -> RunArgs {
    RunArgs {
        scenario_path: Some(workspace_file(&format!("scenarios/{scenario}.json"))),
        out: out.to_path_buf(),
        threads: 1,
        ..Default::default()
    }
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_amrplan"))
}

#[test]
fn plan_writes_a_decision_inside_the_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&Command::Plan(args("tiny3", dir.path()))).unwrap();
    assert_eq!(outcome.exit_code, 0);
    for name in [
        "decision.json",
        "report.csv",
        "summary.json",
        "manifest.json",
    ] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let d: Decision =
        serde_json::from_str(&fs::read_to_string(dir.path().join("decision.json")).unwrap())
            .unwrap();
    let s = common::scenario("tiny3");
    d.check_boxes(&s).unwrap();
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut second = args("tiny3", b.path());
    second.threads = 4;
    run(&Command::Plan(args("tiny3", a.path()))).unwrap();
    run(&Command::Plan(second)).unwrap();
    for name in [
        "decision.json",
        "report.csv",
        "summary.json",
        "manifest.json",
    ] {
        let (x, y) = (
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
        );
        assert_eq!(x, y, "{name} differs between runs");
    }
}

#[test]
fn robust_manifest_records_the_resolved_options() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = args("tiny3", dir.path());
    a.epsilon = Some(0.1);
    a.samples = Some(20);
    a.seed = Some(11);
    run(&Command::PlanRobust(a)).unwrap();
    let manifest = read_json(dir.path().join("manifest.json"));
    assert_eq!(manifest["epsilon"], 0.1);
    assert_eq!(manifest["samples"], 20);
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["command"], "plan-robust");
    let summary = read_json(dir.path().join("summary.json"));
    assert_eq!(summary["audit_ok"], true);
    assert_eq!(summary["budget"], 2);
}

#[test]
fn plan_then_evaluate_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    run(&Command::Plan(args("tiny3", &dir.path().join("plan")))).unwrap();
    let decision = dir.path().join("plan/decision.json");

    let mut eval = args("tiny3", &dir.path().join("eval"));
    eval.decision = Some(decision.clone());
    eval.samples = Some(500);
    run(&Command::Evaluate(eval)).unwrap();
    let summary = read_json(dir.path().join("eval/summary.json"));
    assert!(summary.is_object());

    let mut cmp = args("tiny3", &dir.path().join("cmp"));
    cmp.decision = Some(decision);
    cmp.samples = Some(0);
    run(&Command::Compare(cmp)).unwrap();
    assert!(dir.path().join("cmp/report.csv").exists());
}

#[test]
fn exported_lp_reproduces_the_planning_optimum() {
    let dir = tempfile::tempdir().unwrap();
    run(&Command::ExportLp(args("tiny3", dir.path()))).unwrap();
    let text = fs::read_to_string(dir.path().join("model.lp")).unwrap();
    let parsed = parse_lp(&text).unwrap();
    let exported = solve_milp(&parsed, &SolveOptions::default()).unwrap();

    let s = common::scenario("tiny3");
    let det =
        amrplan::model::assemble_deterministic(&s, &common::fitted(), &Default::default()).unwrap();
    let direct = solve_milp(&det.model, &SolveOptions::default()).unwrap();
    let (x, y) = (exported.objective, direct.objective);
    assert!((x - y).abs() <= 1e-6 * (1.0 + y.abs()), "{x} vs {y}");
}

#[test]
fn fit_writes_the_fitted_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    run(&Command::Fit(RunArgs {
        out: dir.path().to_path_buf(),
        ..Default::default()
    }))
    .unwrap();
    let battery = read_json(dir.path().join("battery.json"));
    let kc = battery["kc"].as_f64().unwrap();
    let ks = battery["ks"].as_f64().unwrap();
    assert!((kc - 0.0012653273445750923).abs() < 1e-12);
    assert!((ks - 6e-5).abs() < 1e-15);
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let dir = tempfile::tempdir().unwrap();

    // no scenario given
    let status = bin()
        .args(["plan", "--out"])
        .arg(dir.path())
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(2));

    // evaluate without a decision
    let status = bin()
        .arg("evaluate")
        .arg(workspace_file("scenarios/tiny3.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(2));

    // a task too long for any target SOC
    let infeasible = dir.path().join("infeasible.json");
    fs::write(
        &infeasible,
        r#"{"n": 2, "xi": [2.0, 1.0], "d": [2.0, 9.0], "s_lower": 0.2,
            "v_bounds": [3.0, 5.0], "c_bounds": [0.75, 1.25], "t_bounds": [0.0, 4.0],
            "tc_bounds": [0.0, 2.0], "tw_bounds": [0.0, 3.0], "s_bounds": [0.4, 1.0],
            "lambda": 0.0001}"#,
    )
    .unwrap();
    let status = bin()
        .arg("plan")
        .arg(&infeasible)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(3));

    let status = bin()
        .arg("plan")
        .arg(workspace_file("scenarios/tiny3.json"))
        .arg("--out")
        .arg(dir.path().join("ok"))
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
}

#[test]
fn robust_export_honours_the_recourse_mode() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = args("tiny3", dir.path());
    a.robust = true;
    a.samples = Some(10);
    a.recourse = Some(amrplan::robust::RecourseMode::Optimize);
    run(&Command::ExportLp(a)).unwrap();
    let text = fs::read_to_string(dir.path().join("model.lp")).unwrap();
    assert!(text.contains(" ws_1_"), "gain variables missing");
    parse_lp(&text).unwrap();
}
