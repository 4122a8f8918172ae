use std::path::Path;
use std::process::{Command, Output};

fn lindisc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lindisc")).args(args).output().expect("spawn lindisc")
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn simulate_writes_identical_csv_twice() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out =
            lindisc(&["simulate", "--scheme", "ies", "--h", "0.01", "--t-end", "1", "--out", p.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = read(&a);
    assert_eq!(text, read(&b));
    assert!(text.starts_with("t,X1,X2,x1,x2,U1,u1,hn,hr\n"));
    assert_eq!(text.lines().count(), 102);
}

#[test]
fn ses_writes_schedule_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ses.csv");
    let out = lindisc(&["simulate", "--scheme", "ses", "--t-end", "0.1", "--out", p.to_str().unwrap()]);
    assert!(out.status.success());
    let sched = read(&dir.path().join("ses_control.csv"));
    assert_eq!(sched.lines().count(), 21);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "scheme=ses\nh=0.1\nt_end=0.5\n").unwrap();
    let out = lindisc(&["simulate", "--config", cfg.to_str().unwrap(), "--scheme", "ees"]);
    assert!(out.status.success());
    let summary = String::from_utf8_lossy(&out.stderr);
    assert!(summary.contains("scheme=ees h=1e-1 samples=6"), "{summary}");
}

#[test]
fn config_errors_exit_with_two() {
    assert_eq!(lindisc(&["simulate", "--h", "-1"]).status.code(), Some(2));
    assert_eq!(lindisc(&["simulate", "--scheme", "rk4"]).status.code(), Some(2));
    assert_eq!(lindisc(&["simulate", "--h", "0.03"]).status.code(), Some(2));
    assert_eq!(lindisc(&["bogus"]).status.code(), Some(2));
    assert_eq!(lindisc(&["simulate", "--config", "/nonexistent/x.cfg"]).status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_with_one_and_keeps_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("blowup.csv");
    let out = lindisc(&["simulate", "--h", "0.5", "--gain", "-40,-40", "--out", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let text = read(&p);
    assert!(text.contains("# failure"));
    assert!(text.lines().count() >= 2);
}

#[test]
fn verify_reports_machine_readable_lines() {
    let out = lindisc(&["verify", "--suite", "symmetry"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().any(|l| l.starts_with("PASS ses-reversal")));
    assert!(text.trim_end().ends_with("failed=0"));
}

#[test]
fn convergence_persists_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = lindisc(&["convergence", "--h-list", "0.1,0.05", "--t-end", "1", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("slope(ses)"));
    assert!(dir.path().join("ees_h1e-1.csv").exists());
    assert!(dir.path().join("ses_h5e-2_control.csv").exists());
}
