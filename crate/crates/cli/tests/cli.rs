use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sscafl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sscafl"))
        .args(args)
        .output()
        .expect("spawn sscafl")
}

fn small_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.cfg");
    let text = format!(
        "algorithm = ssca-sample-con\nclients = 2\nbatch = 10\nrounds = 4\nhidden = 3\n\
         data = synthetic\nsynthetic.n = 200\nsynthetic.inputs = 5\nsynthetic.classes = 3\n{extra}"
    );
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn preset_prints_a_parseable_config() {
    let out = sscafl(&["preset", "feature-b10"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("algorithm = ssca-feature-uncon"), "{text}");
    assert!(text.contains("batch = 10"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.cfg");
    fs::write(&path, text).unwrap();
    let check = sscafl(&["check", "--config", path.to_str().unwrap()]);
    assert!(check.status.success());
}

#[test]
fn unknown_preset_is_a_config_error() {
    assert_eq!(sscafl(&["preset", "nope"]).status.code(), Some(2));
}

#[test]
fn check_reports_the_default_schedules() {
    let out = sscafl(&["check"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["rho = ", "gamma = ", "rho_ok = ", "all_ok = "] {
        assert!(text.contains(key), "{text}");
    }
}

#[test]
fn run_writes_the_metrics_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let csv = dir.path().join("m.csv");
    let out = sscafl(&["run", "--config", &cfg, "--out", csv.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(
        rows[0],
        "rep,round,training_cost,test_accuracy,l2_norm,constraint_value,slack,samples,elapsed_ms"
    );
    // Per-repetition rows, then the mean over repetitions.
    assert_eq!(rows.len(), 1 + 2 * 4);
    assert!(rows[5].starts_with("mean,1,"));
    assert!(text.starts_with("# sscafl "));
}

#[test]
fn runs_with_equal_seeds_match_and_tcp_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let a = sscafl(&["run", "--config", &cfg, "--seed", "3"]);
    let b = sscafl(&["run", "--config", &cfg, "--seed", "3", "--transport", "tcp"]);
    let c = sscafl(&["run", "--config", &cfg, "--seed", "4"]);
    assert!(a.status.success() && b.status.success() && c.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn bad_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = small_config(dir.path(), "bogus = 1\n");
    assert_eq!(
        sscafl(&["run", "--config", &unknown]).status.code(),
        Some(2)
    );
    let too_many = dir.path().join("many.cfg");
    let text = fs::read_to_string(small_config(dir.path(), "")).unwrap();
    fs::write(&too_many, text.replace("clients = 2", "clients = 300")).unwrap();
    assert_eq!(
        sscafl(&["run", "--config", too_many.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    let missing = dir.path().join("absent.cfg");
    assert_eq!(
        sscafl(&["run", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    let cfg = small_config(dir.path(), "");
    assert_eq!(
        sscafl(&["run", "--config", &cfg, "--synthetic", "1,2"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = sscafl(&["sweep", "--config", &cfg, "--ubound", "0.5,0.8,1.2"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 1 + 3);
    assert!(rows[0].starts_with("ubound,"));
}
