use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adagame"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn run_writes_trial_lines_and_a_summary() {
    let out = bin()
        .args(["run", "--trials", "5", "--seed", "4", "--config"])
        .arg(config("lc12_affine_span.toml"))
        .output()
        .unwrap();
    let text = stdout(&out);
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[5]["record"], "summary");
    assert_eq!(lines[5]["trials"], 5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("failure rate"));
}

#[test]
fn run_is_reproducible_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let render = |name: &str| {
        let path = dir.path().join(name);
        let out = bin()
            .args(["run", "--trials", "3", "--config"])
            .arg(config("smart_rounded_ternary.toml"))
            .arg("--out")
            .arg(&path)
            .output()
            .unwrap();
        stdout(&out);
        std::fs::read(path).unwrap()
    };
    assert_eq!(render("a.jsonl"), render("b.jsonl"));
}

#[test]
fn run_csv_summary() {
    let out = bin()
        .args(["run", "--trials", "4", "--format", "csv", "--config"])
        .arg(config("coin_soft_posterior.toml"))
        .output()
        .unwrap();
    assert_eq!(stdout(&out).lines().count(), 2);
}

#[test]
fn sweep_prints_one_row_per_point() {
    let out = bin()
        .args(["sweep", "--trials", "2", "--format", "csv", "--config"])
        .arg(config("sweep_noise.toml"))
        .output()
        .unwrap();
    assert_eq!(stdout(&out).lines().count(), 9);
}

#[test]
fn verify_reports_and_passes() {
    let out = bin().args(["verify", "safepart", "--trials", "40"]).output().unwrap();
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["violations"], 0);
    assert!(report["checks"].as_u64().unwrap() > 0);
}

#[test]
fn verify_rejects_unknown_suites() {
    let out = bin().args(["verify", "nonsense"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn partition_reads_standard_input() {
    let mut child = bin()
        .args(["partition", "--epsilon", "1/10"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"1/4 1/2\n3/4 1/2\n").unwrap();
    let text = stdout(&child.wait_with_output().unwrap());
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# safe point"));
    assert!(lines.count() >= 11);
}

#[test]
fn bad_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "n = 1\n").unwrap();
    let out = bin().args(["run", "--config"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
