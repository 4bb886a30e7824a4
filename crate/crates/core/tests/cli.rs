//! Binary-level behavior: exit codes, config precedence and output files.

use std::path::Path;
use std::process::{Command, Output};

use mab_deform::stats::RunningStats;
use serde_json::Value;

const STEPS_HEADER: &str = "run,algorithm,step,arm,reward,best_reward,error,eta,cum_regret";
const SUMMARY_HEADER: &str = "preset,algorithm,runs,mean_total_regret,std_total_regret";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mab-deform")).args(args).output().unwrap()
}

fn run_in(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mab-deform"))
        .args(args)
        .arg("--output")
        .arg(out)
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn out_of_range_values_name_the_key() {
    for (args, key) in [
        (&["synth", "--xi", "1.5"][..], "xi"),
        (&["synth", "--sigma-tr", "-1"][..], "sigma-tr"),
        (&["task", "--scenario", "cloth-on-table"][..], "scenario"),
        (&["synth", "--runs", "0"][..], "runs"),
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(key), "{args:?}");
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, r#"{"runs": 2, "temperature": 3}"#).unwrap();
    let out = run(&["synth", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("temperature"));
}

#[test]
fn one_run_three_steps_writes_four_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        &["synth", "--preset", "small", "--runs", "1", "--pulls", "3", "--algorithms", "kf-manb"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let steps = std::fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    assert!(!steps.contains('\r'));
    let lines: Vec<_> = steps.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], STEPS_HEADER);
    assert!(lines[1].starts_with("0,kf-manb,0,"));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next(), Some(SUMMARY_HEADER));
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn flags_override_file_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, r#"{"runs": 2, "pulls": 4, "xi": 0.5, "seed": 3}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = run_in(
        &["synth", "--config", path.to_str().unwrap(), "--runs", "1", "--algorithms", "ucb1-normal"],
        &out_dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let config = &manifest(&out_dir)["config"];
    assert_eq!(config["runs"], 1);
    assert_eq!(config["pulls"], 4);
    assert_eq!(config["xi"], 0.5);
    assert_eq!(config["seed"], 3);
    assert_eq!(config["sigma-tr"], 1.0);
    assert_eq!(config["preset"], "small");
}

#[test]
fn resolved_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let out = run_in(&["task", "--scenario", "line-to-arc", "--steps", "2", "--algorithms", "kf-mandb"], &first);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let config = manifest(&first)["config"].clone();
    assert_eq!(config["beta"], 200.0);
    assert_eq!(config["lambda"], 0.005);
    assert_eq!(config["c"], 0.0025);

    let path = dir.path().join("resolved.json");
    std::fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    let second = dir.path().join("second");
    let out = run_in(&["task", "--config", path.to_str().unwrap()], &second);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut again = manifest(&second)["config"].clone();
    again["output"] = config["output"].clone();
    assert_eq!(again, config);
    assert_eq!(
        std::fs::read(first.join("steps.csv")).unwrap(),
        std::fs::read(second.join("steps.csv")).unwrap()
    );
}

#[test]
fn task_defaults_follow_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        &["task", "--scenario", "chain-spread", "--steps", "3", "--algorithms", "ucb1-normal"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let config = &manifest(dir.path())["config"];
    assert_eq!(config["beta"], 1000.0);
    assert_eq!(config["lambda"], 0.03);
    assert_eq!(config["c"], 0.0025);
    assert_eq!(config["models"], 60);
    let steps = std::fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 4);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["synth", "--preset", "medium", "--runs", "3", "--pulls", "50", "--seed", "42"];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run_in(&args, &a).status.success());
    assert!(run_in(&args, &b).status.success());
    for file in ["steps.csv", "summary.csv"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn constant_regret_summary() {
    let stats: RunningStats = std::iter::repeat_n(2.0, 4).collect();
    assert_eq!(stats.count(), 4);
    assert_eq!(stats.mean(), 2.0);
    assert_eq!(stats.sample_std(), 0.0);
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = run_in(&["synth", "--runs", "1", "--pulls", "2"], &blocker.join("sub"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("file"));
}

#[test]
fn selftest_modes() {
    let healthy = run(&["selftest"]);
    assert_eq!(healthy.status.code(), Some(0));

    let list = run(&["selftest", "--list"]);
    assert_eq!(list.status.code(), Some(0));
    let names = String::from_utf8_lossy(&list.stdout).into_owned();
    for name in ["solver-kkt", "kf-reduction", "kf-covariance-symmetry", "similarity-psd", "broyden-secant"] {
        assert!(names.lines().any(|l| l == name), "{name}");
    }

    let faulty = run(&["selftest", "--inject", "kf-asymmetry"]);
    assert_eq!(faulty.status.code(), Some(1));
    let report = String::from_utf8_lossy(&faulty.stdout);
    assert!(report.contains("FAIL kf-covariance-symmetry"));
    assert_eq!(report.matches("FAIL").count(), 1);

    assert_eq!(run(&["selftest", "--inject", "nonsense"]).status.code(), Some(2));
}
