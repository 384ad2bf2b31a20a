use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn slipnet(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slipnet"))
        .args(args)
        .current_dir(dir)
        .env_remove("SLIPNET_THREADS")
        .output()
        .unwrap()
}

const TINY: &str = r#"
seed = 8
[kinematic]
depths_mm = [3.0]
speeds_mm_s = [1.6]
[gravity]
enabled = false
[disturbance]
enabled = false
[train]
epochs = 0
"#;

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(slipnet(&[], dir.path()).status.code(), Some(2));
    assert_eq!(slipnet(&["fly"], dir.path()).status.code(), Some(2));
    assert_eq!(slipnet(&["simulate"], dir.path()).status.code(), Some(2));
    let out = slipnet(&["simulate", "--config", "absent.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.toml"));
}

#[test]
fn train_without_manifest_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("suite.toml"), TINY).unwrap();
    let out = slipnet(&["train", "--config", "suite.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dataset/manifest.txt"), "{err}");
}

#[test]
fn invalid_config_values_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("suite.toml"), "[kinematic]\nrepeats = 0\n").unwrap();
    let out = slipnet(&["simulate", "--config", "suite.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn thread_cap_must_be_a_positive_integer() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("suite.toml"), TINY).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_slipnet"))
        .args(["simulate", "--config", "suite.toml"])
        .current_dir(dir.path())
        .env("SLIPNET_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tiny_pipeline_runs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("suite.toml"), TINY).unwrap();
    let run = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd, "--config", "suite.toml"];
        args.extend_from_slice(extra);
        let out = slipnet(&args, dir.path());
        assert_eq!(
            out.status.code(),
            Some(0),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    };
    assert!(run("simulate", &[]).contains("simulated 8 kinematic"));
    assert!(run("build", &[]).starts_with("split,no_slip,incipient,gross"));
    assert!(run("train", &[]).contains("no epochs run"));
    let eval = run("eval", &[]);
    let line = eval.lines().next().unwrap();
    let pct = line
        .strip_prefix("test accuracy ")
        .and_then(|s| s.strip_suffix('%'))
        .unwrap();
    assert_eq!(pct.split('.').nth(1).map(str::len), Some(2), "{line}");
    assert!(dir.path().join("reports/confusion.csv").exists());
    assert!(dir.path().join("model/weights.snnw").exists());

    // Detection needs gravity trials; none were simulated.
    let out = slipnet(&["detect", "--config", "suite.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let before = fs::read(dir.path().join("trials/trials.csv")).unwrap();
    run("simulate", &["--seed", "9"]);
    assert_ne!(
        fs::read(dir.path().join("trials/trials.csv")).unwrap(),
        before
    );
}
