//! The binary end to end: outputs, headers and exit codes.

use std::path::Path;
use std::process::{Command, Output};

use riskalloc::certify::GAP_HEADER;
use riskalloc::cli::{SolveSummary, MIX_HEADER, RISK_HEADER};
use riskalloc::model::InstanceConfig;
use serde_json::{json, Value};

fn riskalloc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskalloc"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, value: &Value) {
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value).unwrap()).unwrap();
}

fn toy() -> Value {
    json!({
        "scenario": {"points": [[1.0]]},
        "service": {"type": "linear_gain", "power_cost": false},
        "risks": [{"type": "expectation"}],
        "utility": {"type": "weighted_sum", "weights": [1.0], "offset": 0.0},
        "constraints": [],
        "x_box": {"lower": [0.0], "upper": [1.0]},
        "policy_class": {"type": "uniform_box", "dim": 1, "upper": 1.0, "grid": 11},
        "seed": 0
    })
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn generate_writes_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = riskalloc(
        &["generate", "--family", "interference2", "--scenarios", "8", "--seed", "7", "--out", "i2.json"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let config = InstanceConfig::load(&dir.path().join("i2.json")).unwrap();
    assert_eq!(config.build().unwrap().len(), 8);
}

#[test]
fn solve_toy_reports_unit_dual() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "toy.json", &toy());
    let out = riskalloc(&["solve", "--config", "toy.json"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: SolveSummary = serde_json::from_slice(&out.stdout).unwrap();
    assert!((summary.dual - 1.0).abs() <= 1e-3);
    assert!(summary.feasible && summary.primal >= 1.0 - 1e-3);
}

#[test]
fn gap_study_csv_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "toy.json", &toy());
    let out = riskalloc(
        &["gap-study", "--config", "toy.json", "--levels", "1,3", "--max-iters", "50", "--seed", "9", "--method", "coordinate"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], GAP_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,1,"));
    assert!(lines[2].starts_with("3,3,"));
    assert!(lines[1].ends_with(",coordinate,9,0"));
}

#[test]
fn bad_weights_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = toy();
    bad["scenario"] = json!({"points": [[1.0], [2.0]], "weights": [0.6, 0.5]});
    write(dir.path(), "bad.json", &bad);
    let out = riskalloc(&["gap-study", "--config", "bad.json"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = riskalloc(&["solve", "--config", "missing.json"], dir.path());
    assert_eq!(code(&out), 2);
    let mut unknown = toy();
    unknown["bogus"] = json!(1);
    write(dir.path(), "unknown.json", &unknown);
    assert_eq!(code(&riskalloc(&["solve", "--config", "unknown.json"], dir.path())), 2);
    let mut callback = toy();
    callback["utility"] = json!({"type": "callback", "name": "f"});
    write(dir.path(), "callback.json", &callback);
    assert_eq!(code(&riskalloc(&["solve", "--config", "callback.json"], dir.path())), 2);
    write(dir.path(), "toy.json", &toy());
    assert_eq!(code(&riskalloc(&["gap-study", "--config", "toy.json", "--levels", "2,1"], dir.path())), 2);
    let out = Command::new(env!("CARGO_BIN_EXE_riskalloc"))
        .args(["solve", "--config", "toy.json"])
        .current_dir(dir.path())
        .env("RISKALLOC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn slater_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut strict = toy();
    // x ≥ 1 on X = [0, 1] leaves no strictly feasible point.
    strict["constraints"] = json!([{"type": "weighted_sum", "weights": [1.0], "offset": -1.0}]);
    write(dir.path(), "strict.json", &strict);
    assert_eq!(code(&riskalloc(&["solve", "--config", "strict.json"], dir.path())), 4);
}

#[test]
fn oversized_grid_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = riskalloc::generate::generate(riskalloc::generate::Family::Outage, 8, 0).unwrap();
    // Non-CVaR risks force full grid enumeration: 9^8 policies.
    c.risks = vec![riskalloc::RiskSpec::Mad { lambda: 0.5 }, riskalloc::RiskSpec::Expectation];
    std::fs::write(dir.path().join("big.json"), c.to_json().unwrap()).unwrap();
    assert_eq!(code(&riskalloc(&["solve", "--config", "big.json"], dir.path())), 3);
}

#[test]
fn risk_eval_table() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "sample.json",
        &json!({
            "sample": {"weights": [0.1, 0.9], "values": [0.0, 10.0]},
            "risks": [{"type": "mad", "lambda": 1.0}, {"type": "cvar", "beta": 0.5}, {"type": "expectation"}]
        }),
    );
    let out = riskalloc(&["risk-eval", "--config", "sample.json"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], RISK_HEADER);
    assert_eq!(lines[1], "mad(lambda=1),10.8,7.2,3");
    assert_eq!(lines[2], "cvar(beta=0.5),10,8,2");
    assert_eq!(lines[3], "expectation,9,9,1");
}

#[test]
fn mix_demo_csv() {
    let dir = tempfile::tempdir().unwrap();
    riskalloc(&["generate", "--family", "interference2", "--scenarios", "4", "--out", "i2.json"], dir.path());
    let out = riskalloc(
        &["mix-demo", "--config", "i2.json", "--levels", "1,2", "--alphas", "0,0.5,1", "--out", "mix.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("mix.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], MIX_HEADER);
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[1], "0,1,0,0");
    assert_eq!(lines[6], "1,2,0,8");
}

#[test]
fn table_scenarios_resolve_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("cfg")).unwrap();
    std::fs::write(dir.path().join("cfg/atoms.csv"), "w,h1\n0.5,1.0\n0.5,2.0\n").unwrap();
    let mut c = toy();
    c["scenario"] = json!({"table": "atoms.csv"});
    write(&dir.path().join("cfg"), "toy.json", &c);
    let out = riskalloc(&["solve", "--config", "cfg/toy.json"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}
