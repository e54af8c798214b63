use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn srvscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srvscan")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes_follow_findings_and_errors() {
    let vuln = corpus().join("figures/vulnerable/interest_permit.sol");
    let clean = corpus().join("misc/no_signatures.sol");
    assert_eq!(srvscan(&["scan", "--input", path(&vuln)]).status.code(), Some(1));
    assert_eq!(srvscan(&["scan", path(&clean)]).status.code(), Some(0));
    assert_eq!(srvscan(&["scan", "--input", "/nonexistent/x.sol"]).status.code(), Some(2));
    assert_eq!(srvscan(&["scan", path(&clean), "--detectors", "NOPE"]).status.code(), Some(2));
    assert_eq!(srvscan(&["scan", path(&clean), "--oracle", "replay"]).status.code(), Some(2));
}

#[test]
fn parse_failure_alone_is_an_error() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.sol");
    std::fs::write(&bad, "contract {").unwrap();
    let out = srvscan(&["scan", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.sol"));
}

#[test]
fn json_report_on_stdout() {
    let vuln = corpus().join("figures/vulnerable/hermez_withdraw.sol");
    let out = srvscan(&["scan", path(&vuln), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["findings"].as_array().unwrap().len(), 1);
    assert_eq!(v["findings"][0]["srv_type"], "X-PRA");
    assert!(v.get("timings").is_none());

    let timed = srvscan(&["scan", path(&vuln), "--format", "json", "--timings"]);
    let v: serde_json::Value = serde_json::from_slice(&timed.stdout).unwrap();
    assert!(v["timings"][0]["frontend_ms"].is_number());
}

#[test]
fn sarif_and_config_file() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("srvscan.toml");
    let report = d.path().join("out.sarif");
    std::fs::write(
        &cfg,
        format!(
            "input = [{:?}]\nformat = \"json\"\noutput = {:?}\n",
            path(&corpus().join("figures/vulnerable/adex_quick_acc_manager.sol")),
            path(&report)
        ),
    )
    .unwrap();
    let out = srvscan(&["scan", "--config", path(&cfg), "--format", "sarif"]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["version"], "2.1.0");
    assert_eq!(v["runs"][0]["results"][0]["ruleId"], "SRV-CASR");
}

#[test]
fn debug_dumps_are_written() {
    let d = tempfile::tempdir().unwrap();
    let vuln = corpus().join("figures/vulnerable/interest_permit.sol");
    srvscan(&["scan", path(&vuln), "--debug-dumps", path(d.path())]);
    let dumps: Vec<_> = std::fs::read_dir(d.path()).unwrap().collect();
    assert!(!dumps.is_empty());
}

#[test]
fn screen_lists_sink_files() {
    let out = srvscan(&["screen", path(&corpus().join("screening"))]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("s01_bare_ecrecover.sol"));
    assert!(!text.contains("s02_comment_only.sol"));
}

#[test]
fn fetch_without_environment_fails_cleanly() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_srvscan"))
        .args(["fetch", "--cache-dir", path(d.path()), "0x01"])
        .env_remove("SRVSCAN_EXPLORER_URL")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
