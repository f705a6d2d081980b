//! End-to-end tests of the `leash` binary: exit codes, output layout, and
//! the documented command contracts.

use std::path::Path;
use std::process::{Command, Output};

fn leash(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leash"))
        .args(args)
        .current_dir(dir)
        .env("LEASH_LOG", "off")
        .output()
        .expect("binary runs")
}

fn write_tiny_tasks(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tasks.json");
    std::fs::write(
        &path,
        r#"{
            "schema_version": 1,
            "tasks": [
                {"id": 0, "required_length": 4, "max_length": 24, "base_success": 0.1},
                {"id": 1, "required_length": 8, "max_length": 24, "base_success": 0.1}
            ]
        }"#,
    )
    .unwrap();
    path
}

fn write_train_config(dir: &Path, name: &str, iterations: usize) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(
        &path,
        format!(
            r#"{{
                "batch_size": 8,
                "group_size": 4,
                "target_length": 8,
                "iterations": {iterations},
                "global_seed": 5,
                "tasks_path": "tasks.json"
            }}"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = leash(&["train", "--config", "nope.json", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nope.json"), "stderr was: {stderr}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"target_length": 8, "iterations": 1, "global_seed": 0, "zz": 1}"#)
        .unwrap();
    let out = leash(&["train", "--config", "bad.json", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zz"));
}

#[test]
fn train_writes_expected_rows_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_tasks(dir.path());
    write_train_config(dir.path(), "config.json", 10);

    let out = leash(&["train", "--config", "config.json", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let metrics = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert!(lines.next().unwrap().starts_with("iteration,satisfaction_rate,lambda"));
    assert_eq!(lines.count(), 10);

    for artifact in
        ["policy.json", "manifest.json", "lambda.svg", "satisfaction_rate.svg", "mean_length.svg"]
    {
        assert!(dir.path().join("run").join(artifact).exists(), "missing {artifact}");
    }

    // The manifest embeds the resolved config and the task-set digest.
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["iterations"], 10);
    assert!(manifest["task_set_sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn seed_and_iteration_overrides_change_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_tasks(dir.path());
    write_train_config(dir.path(), "config.json", 10);

    let out = leash(
        &["train", "--config", "config.json", "--out", "run", "--seed", "11", "--iterations", "3"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["global_seed"], 11);
    assert_eq!(manifest["config"]["iterations"], 3);
    let metrics = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
}

#[test]
fn ablate_writes_four_arm_directories_and_a_comparison() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_tasks(dir.path());
    write_train_config(dir.path(), "config.json", 6);

    let out = leash(&["ablate", "--config", "config.json", "--out", "ab"], dir.path());
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let arms = [
        "adaptive-one-sided",
        "constant-one-sided",
        "adaptive-two-sided",
        "constant-two-sided",
    ];
    for arm in arms {
        assert!(dir.path().join("ab").join(arm).join("metrics.csv").exists(), "missing {arm}");
    }

    let comparison = std::fs::read_to_string(dir.path().join("ab/comparison.csv")).unwrap();
    let lines: Vec<&str> = comparison.lines().collect();
    assert_eq!(lines.len(), 1 + 6);
    assert!(lines[0].starts_with("iteration,adaptive_one_sided_satisfaction_rate"));

    // Matched seeds and an identical initial coefficient mean the controller
    // arms share their first batch exactly.
    let first_row = |arm: &str| {
        let text =
            std::fs::read_to_string(dir.path().join("ab").join(arm).join("metrics.csv")).unwrap();
        text.lines().nth(1).unwrap().to_string()
    };
    assert_eq!(first_row("adaptive-one-sided"), first_row("constant-one-sided"));
}

#[test]
fn eval_reports_per_task_rows() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_tasks(dir.path());
    write_train_config(dir.path(), "config.json", 4);
    let out = leash(&["train", "--config", "config.json", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(0));

    std::fs::write(
        dir.path().join("eval.json"),
        r#"{
            "policy_path": "run/policy.json",
            "tasks_path": "tasks.json",
            "target_length": 8,
            "rollouts_per_task": 16,
            "seed": 7
        }"#,
    )
    .unwrap();
    let out = leash(&["eval", "--config", "eval.json", "--out", "ev"], dir.path());
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("eval:"));

    let eval_csv = std::fs::read_to_string(dir.path().join("ev/eval.csv")).unwrap();
    assert_eq!(eval_csv.lines().count(), 1 + 2);
    assert!(eval_csv.starts_with("task_id,required_length,mean_length,accuracy,satisfaction_rate"));
}

#[test]
fn analyze_handles_jsonl_malformed_records_and_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("mixed.jsonl"),
        concat!(
            r#"{"id": 0, "text": "So we wait."}"#,
            "\n",
            "not json at all\n",
            r#"{"id": 1, "text": "First step."}"#,
            "\n",
            r#"{"id": 2}"#,
            "\n",
            r#"{"id": 3, "text": "Nothing here."}"#,
            "\n",
        ),
    )
    .unwrap();
    std::fs::write(dir.path().join("an.json"), r#"{"input_path": "mixed.jsonl"}"#).unwrap();

    let out = leash(&["analyze", "--config", "an.json", "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let warnings = String::from_utf8_lossy(&out.stderr)
        .lines()
        .filter(|l| l.starts_with("warning:"))
        .count();
    assert_eq!(warnings, 2);

    let behavior = std::fs::read_to_string(dir.path().join("res/behavior.csv")).unwrap();
    assert!(behavior.starts_with("group,mean_count"));
    assert!(behavior.contains("sample_count,3"));

    // Empty input fails with a runtime error.
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    std::fs::write(dir.path().join("an2.json"), r#"{"input_path": "empty.jsonl"}"#).unwrap();
    let out = leash(&["analyze", "--config", "an2.json", "--out", "res2"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn analyze_reads_rollout_json() {
    use leash_core::envsim::{fixed_policies::StopAtLength, sample_rollout, TaskSpec};
    let dir = tempfile::tempdir().unwrap();
    let task = TaskSpec::new(0, 3, 16, 0.5);
    let rollouts: Vec<_> =
        (0..5).map(|i| sample_rollout(&StopAtLength(6), &task, i).unwrap()).collect();
    std::fs::write(
        dir.path().join("rollouts.json"),
        serde_json::to_string(&rollouts).unwrap(),
    )
    .unwrap();
    std::fs::write(dir.path().join("an.json"), r#"{"input_path": "rollouts.json"}"#).unwrap();

    let out = leash(&["analyze", "--config", "an.json", "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let behavior = std::fs::read_to_string(dir.path().join("res/behavior.csv")).unwrap();
    assert!(behavior.contains("mean_length,6.00000"));
    assert!(behavior.contains("sample_count,5"));
}

#[test]
fn gen_tasks_synthesizes_a_loadable_set() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("gen.json"),
        r#"{
            "count": 12,
            "required_length_min": 5,
            "required_length_max": 30,
            "max_length": 64,
            "base_success": 0.1,
            "seed": 3
        }"#,
    )
    .unwrap();
    let out = leash(&["gen-tasks", "--config", "gen.json", "--out", "g"], dir.path());
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let set = leash_core::envsim::TaskSet::load(&dir.path().join("g/tasks.json")).unwrap();
    assert_eq!(set.tasks.len(), 12);
    assert!(set.tasks.iter().all(|t| (5..=30).contains(&t.required_length)));
    assert!(set.tasks.iter().all(|t| t.max_length == 64));

    // Same config, same seed: identical file bytes.
    let out = leash(&["gen-tasks", "--config", "gen.json", "--out", "g2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        std::fs::read(dir.path().join("g/tasks.json")).unwrap(),
        std::fs::read(dir.path().join("g2/tasks.json")).unwrap()
    );

    // Degenerate ranges are configuration errors.
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"count": 0, "required_length_min": 5, "required_length_max": 30,
            "max_length": 64, "base_success": 0.1, "seed": 3}"#,
    )
    .unwrap();
    let out = leash(&["gen-tasks", "--config", "bad.json", "--out", "g3"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn commands_do_not_mutate_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = write_tiny_tasks(dir.path());
    let config = write_train_config(dir.path(), "config.json", 3);
    let tasks_before = std::fs::read(&tasks).unwrap();
    let config_before = std::fs::read(&config).unwrap();

    let out = leash(&["train", "--config", "config.json", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read(&tasks).unwrap(), tasks_before);
    assert_eq!(std::fs::read(&config).unwrap(), config_before);
}

#[test]
fn toml_configs_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_tasks(dir.path());
    std::fs::write(
        dir.path().join("config.toml"),
        concat!(
            "batch_size = 8\n",
            "group_size = 4\n",
            "target_length = 8\n",
            "iterations = 2\n",
            "global_seed = 5\n",
            "tasks_path = \"tasks.json\"\n",
        ),
    )
    .unwrap();
    let out = leash(&["train", "--config", "config.toml", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}
