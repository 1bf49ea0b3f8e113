use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dynrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynrisk"))
        .args(args)
        .env_remove("DYNRISK_OUT")
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn malformed_alpha_is_a_validation_error() {
    let o = dynrisk(&["oracle", "--env", "cliffwalk", "--risk", "cvar", "--alpha", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    let o = dynrisk(&["oracle", "--env", "cliffwalk", "--risk", "cvar", "--alpha", "abc"]);
    assert_eq!(o.status.code(), Some(1));
    let o = dynrisk(&["train", "--config", &config("maze-expac.toml"), "--override", "agent.alpha=0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(dynrisk(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dynrisk(&["oracle", "--risk", "cvar"]).status.code(), Some(1));
    assert_eq!(dynrisk(&["oracle", "--env", "volcano"]).status.code(), Some(1));
    let o = dynrisk(&["train", "--config", &config("maze-ql.toml"), "--override", "agent.bogus=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(dynrisk(&["--help"]).status.code(), Some(0));
}

#[test]
fn oracle_writes_tables_and_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = dynrisk(&["oracle", "--env", "cliffwalk", "--risk", "cvar", "--alpha", "0.1", "--out", path_arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("RiskAverse"));
    for f in ["q_star.csv", "v_star.csv", "greedy_policy.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let header = std::fs::read_to_string(out.join("q_star.csv")).unwrap();
    assert!(header.starts_with("state,action,q"));

    let o = dynrisk(&["oracle", "--env", "maze", "--risk", "mean", "--out", path_arg(&out)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("RiskNeutral"));
}

#[test]
fn train_evaluate_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = dynrisk(&[
        "train",
        "--config",
        &config("maze-expac.toml"),
        "--seeds",
        "0,1",
        "--out",
        path_arg(&out),
        "--override",
        "agent.total_steps=3000",
        "--override",
        "evaluation.cadence=1000",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["summary.json", "metrics_0.csv", "metrics_1.csv", "policy_0.csv", "q_1.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seeds"], serde_json::json!([0, 1]));
    assert_eq!(summary["checkpoints"].as_array().unwrap().len(), 3);

    let policy = out.join("policy_0.csv");
    let o = dynrisk(&["evaluate", "--env", "maze", "--policy", path_arg(&policy), "--episodes", "20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("risk-averse rate"));

    let o = dynrisk(&["evaluate", "--env", "cliffwalk", "--policy", path_arg(&policy)]);
    assert_eq!(o.status.code(), Some(1), "policy shape mismatch is a usage error");

    let svg = dir.path().join("curve.svg");
    let o = dynrisk(&["plot", path_arg(&out), "--out", path_arg(&svg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dynrisk"))
        .args(["train", "--config", &config("cliffwalk-ql.toml"), "--seed", "3", "--override", "agent.total_steps=2000"])
        .env("DYNRISK_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("cliffwalk-ql");
    assert!(run.join("metrics_3.csv").exists());
    assert!(run.join("q_3.csv").exists());
}
