use std::io::Write;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_tauprior");

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("TAUPRIOR_SEED")
        .env_remove("TAUPRIOR_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn fit_reports_gamma() {
    let v = stdout_json(&run(&["fit", "--chips", &fixture("ta163_chips.csv")]));
    assert_eq!(v["fit"]["dist"]["family"], "gamma_on_rminus1");
    let shape = v["fit"]["dist"]["shape"].as_f64().unwrap();
    let rate = v["fit"]["dist"]["rate"].as_f64().unwrap();
    assert!((shape - 2.62).abs() < 0.1 && (rate - 0.721).abs() < 0.03, "{shape} {rate}");
}

#[test]
fn table_probit_column() {
    let out = run(&["table", "--scale", "probit"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("heterogeneity,r,tau,tau_scaled"));
    assert!(text.contains("high,10.51,0.6,0.3308"));
    assert!(text.contains("extreme,2540.20,2,1.1027"));
}

#[test]
fn errors_are_json_on_stderr() {
    let out = run(&["fit", "--chips", "/definitely/missing.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");

    let out = run(&["compare", "--dataset", "ta999"]);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "not_found");

    let out = run(&["analyze"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "usage");
}

#[test]
fn compare_is_byte_stable() {
    let args = ["compare", "--dataset", "ta163", "--priors", "all", "--seed", "1", "--burn-in", "1000", "--keep", "1000"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("| RE") || l.starts_with("| FE")).count(), 5);
}

#[test]
fn seed_comes_from_environment() {
    let args = ["compare", "--dataset", "ta163", "--priors", "fe", "--burn-in", "500", "--keep", "500", "--format", "json"];
    let with_env = Command::new(BIN).args(args).env("TAUPRIOR_SEED", "9").output().unwrap();
    let v = stdout_json(&with_env);
    assert_eq!(v["provenance"]["seed"], 9);
}

#[test]
fn analyze_writes_report_and_traces_under_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(BIN)
        .args([
            "analyze", "--dataset", "ta163", "--prior", "truncated", "--burn-in", "500", "--keep", "300", "--chains", "2",
            "--contrast", "3,2", "--output", "run/report.json", "--traces", "run/traces.csv",
        ])
        .env("TAUPRIOR_OUTPUT_DIR", dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["effect"], "random_effects");
    assert!(report["summary"]["contrasts"].as_array().unwrap().iter().any(|c| c["a"] == 3 && c["b"] == 2));
    let traces = std::fs::read_to_string(dir.path().join("run/traces.csv")).unwrap();
    let mut lines = traces.lines();
    assert!(lines.next().unwrap().starts_with("chain,iteration,d[infliximab],d[ciclosporin]"));
    assert_eq!(lines.count(), 600);
}

#[test]
fn analyze_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"dataset":"ta336","model":{"effect":"fixed_effect"},"mcmc":{"burn_in":500,"keep":500},"format":"markdown"}"#,
    )
    .unwrap();
    let out = run(&["analyze", "--config", cfg.to_str().unwrap(), "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("DIC"));
}

fn elicit(input: &str, extra: &[&str]) -> Value {
    let mut child = Command::new(BIN)
        .arg("elicit")
        .args(extra)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    stdout_json(&child.wait_with_output().unwrap())
}

#[test]
fn elicit_walkthrough_endpoints() {
    assert_eq!(elicit("y\n", &[])["endpoint"], "fixed_effect");
    assert_eq!(elicit("n\n\n", &[])["endpoint"], "default_prior");
    assert_eq!(elicit("n\n10\n\n", &[])["endpoint"], "truncated_default_prior");
    let v = elicit("n\n10\n4 5 6 6 5 4 2 1 1\ny\n", &["--total-chips", "34"]);
    assert_eq!(v["endpoint"], "elicited_ratio");
    let v = elicit("n\n10\n", &["--chips", &fixture("ta336_chips.csv")]);
    assert_eq!(v["prior"]["type"], "elicited_ratio");
}

#[test]
fn elicit_recovers_from_bad_input() {
    // bad answers, a wrong-length allocation, a rejected fit, then decline
    let v = elicit("maybe\nn\n0.5\n10\n9 9 9\n5 5 5 5 0 0 0 0 0\nn\n\n", &[]);
    assert_eq!(v["endpoint"], "truncated_default_prior");
}

#[test]
fn elicit_fails_cleanly_on_eof() {
    let child = Command::new(BIN)
        .arg("elicit")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .output()
        .unwrap();
    assert_eq!(child.status.code(), Some(1));
    let stderr = String::from_utf8(child.stderr).unwrap();
    let err: Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(err["error"], "state");
}
