//! The `leash` command-line front end.
//!
//! Subcommands: `train` (one run), `ablate` (the controller x penalty grid on
//! shared seeds), `eval` (held-out rollouts from a saved policy), `analyze`
//! (keyword/behavior statistics), and `gen-tasks` (synthesize a task set).
//! Configuration comes from a JSON or TOML file; `--seed`, `--iterations`,
//! `--controller`, and `--penalty` override it from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! `LEASH_LOG` (`off`, `info`, `debug`) controls stderr verbosity.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::analysis::{self, BehaviorStats, KeywordGroups};
use crate::dual::ControllerKind;
use crate::envsim::{self, derive_seed, Rollout, TaskSet, TaskSpec};
use crate::plot::{write_line_chart, Series};
use crate::policy::PolicyParams;
use crate::shaping::PenaltyKind;
use crate::trainer::{self, format_sig6, TrainConfig, TrainHistory};
use crate::Error;

const STREAM_EVAL: u64 = 101;

#[derive(Parser)]
#[command(
    name = "leash",
    version,
    about = "Adaptive length-penalty training on synthetic think-then-answer tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training configuration and write metrics, policy, and plots.
    Train(CommonArgs),
    /// Run the 2x2 controller/penalty ablation grid on shared seeds.
    Ablate(CommonArgs),
    /// Evaluate a saved policy on a task set.
    Eval(CommonArgs),
    /// Compute keyword or marker-action statistics over texts or rollouts.
    Analyze(CommonArgs),
    /// Synthesize a task-set file from a distribution description.
    GenTasks(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (.json or .toml).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Override the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the iteration budget.
    #[arg(long)]
    iterations: Option<usize>,
    /// Override the dual controller.
    #[arg(long, value_enum)]
    controller: Option<ControllerArg>,
    /// Override the penalty form.
    #[arg(long, value_enum)]
    penalty: Option<PenaltyArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Adaptive,
    Constant,
}

#[derive(Clone, Copy, ValueEnum)]
enum PenaltyArg {
    OneSided,
    TwoSided,
    TwoSidedClipped,
}

impl From<ControllerArg> for ControllerKind {
    fn from(v: ControllerArg) -> Self {
        match v {
            ControllerArg::Adaptive => ControllerKind::Adaptive,
            ControllerArg::Constant => ControllerKind::Constant,
        }
    }
}

impl From<PenaltyArg> for PenaltyKind {
    fn from(v: PenaltyArg) -> Self {
        match v {
            PenaltyArg::OneSided => PenaltyKind::OneSided,
            PenaltyArg::TwoSided => PenaltyKind::TwoSided,
            PenaltyArg::TwoSidedClipped => PenaltyKind::TwoSidedClipped,
        }
    }
}

enum CliError {
    /// Bad invocation or configuration; exit 2.
    Usage(String),
    /// Failure while doing the work; exit 1.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn usage(err: impl std::fmt::Display) -> CliError {
    CliError::Usage(err.to_string())
}

fn runtime(err: impl std::fmt::Display) -> CliError {
    CliError::Runtime(err.to_string())
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum LogLevel {
    Off = 0,
    Info = 1,
    Debug = 2,
}

fn log_level() -> LogLevel {
    match std::env::var("LEASH_LOG").as_deref() {
        Ok("off") | Ok("quiet") | Ok("0") => LogLevel::Off,
        Ok("debug") | Ok("2") => LogLevel::Debug,
        _ => LogLevel::Info,
    }
}

fn log_info(msg: &str) {
    if log_level() >= LogLevel::Info {
        eprintln!("leash: {msg}");
    }
}

fn log_debug(msg: &str) {
    if log_level() >= LogLevel::Debug {
        eprintln!("leash[debug]: {msg}");
    }
}

/// Entry point for the binary: parse `std::env::args` and run.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Entry point with explicit arguments, for tests.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return err.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Train(args) => train_command(args),
        Command::Ablate(args) => ablate_command(args),
        Command::Eval(args) => eval_command(args),
        Command::Analyze(args) => analyze_command(args),
        Command::GenTasks(args) => gen_tasks_command(args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {}", err.message());
            err.code()
        }
    }
}

/// Parse a config file as JSON or TOML depending on its extension.
fn load_config<C: serde::de::DeserializeOwned>(path: &Path) -> Result<C, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text)
            .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
    } else {
        serde_json::from_str(&text).map_err(|e| {
            usage(format!(
                "invalid config {}: line {}, column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })
    }
}

/// Resolve a path from a config file relative to that file's directory.
fn resolve_relative(config_path: &Path, target: &str) -> PathBuf {
    let target = Path::new(target);
    if target.is_absolute() {
        target.to_path_buf()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(target)
    }
}

fn ensure_out_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| usage(format!("cannot create output directory {}: {e}", path.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Manifest<C: Serialize> {
    schema_version: u32,
    command: String,
    crate_version: String,
    /// Fingerprint of the resolved configuration below.
    config_fingerprint: String,
    /// The fully resolved configuration, overrides applied.
    config: C,
    #[serde(skip_serializing_if = "Option::is_none")]
    task_set_sha256: Option<String>,
}

fn write_manifest<C: Serialize>(
    out: &Path,
    command: &str,
    config: &C,
    task_set: Option<&TaskSet>,
) -> Result<(), CliError> {
    let config_json = serde_json::to_string(config).map_err(runtime)?;
    let manifest = Manifest {
        schema_version: 1,
        command: command.to_string(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_fingerprint: sha256_hex(config_json.as_bytes()),
        config,
        task_set_sha256: task_set.map(|t| sha256_hex(t.to_json().as_bytes())),
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
    std::fs::write(&path, text)
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn apply_overrides(cfg: &mut TrainConfig, args: &CommonArgs) {
    if let Some(seed) = args.seed {
        cfg.global_seed = seed;
    }
    if let Some(iterations) = args.iterations {
        cfg.iterations = iterations;
    }
    if let Some(controller) = args.controller {
        cfg.controller = controller.into();
    }
    if let Some(penalty) = args.penalty {
        cfg.penalty = penalty.into();
    }
}

fn load_tasks(cfg: &TrainConfig, config_path: &Path) -> Result<TaskSet, CliError> {
    match &cfg.tasks_path {
        Some(p) => {
            let path = resolve_relative(config_path, p);
            TaskSet::load(&path).map_err(usage)
        }
        None => Ok(TaskSet::default_benchmark()),
    }
}

/// Train one configuration into `out`: metrics.csv, policy.json, manifest,
/// and the three dynamics plots.
fn run_training(
    cfg: &TrainConfig,
    tasks: &TaskSet,
    out: &Path,
) -> Result<TrainHistory, CliError> {
    let metrics_path = out.join("metrics.csv");
    let history = trainer::train(cfg, tasks, Some(&metrics_path)).map_err(runtime)?;
    history.final_policy.save(&out.join("policy.json")).map_err(runtime)?;
    write_dynamics_plots(out, &history)?;
    Ok(history)
}

fn write_dynamics_plots(out: &Path, history: &TrainHistory) -> Result<(), CliError> {
    if history.metrics.is_empty() {
        return Ok(());
    }
    let lambda: Vec<f64> = history.metrics.iter().map(|m| m.lambda).collect();
    let satisfaction: Vec<f64> =
        history.metrics.iter().map(|m| m.satisfaction_rate).collect();
    let mean_length: Vec<f64> = history.metrics.iter().map(|m| m.mean_length).collect();
    let effective: Vec<f64> = history.metrics.iter().map(|m| m.effective_penalty).collect();

    write_line_chart(
        &out.join("lambda.svg"),
        "penalty coefficient",
        "lambda",
        &[Series { name: "lambda", values: &lambda }],
    )
    .map_err(runtime)?;
    write_line_chart(
        &out.join("satisfaction_rate.svg"),
        "length-budget satisfaction",
        "fraction of rollouts",
        &[Series { name: "satisfaction", values: &satisfaction }],
    )
    .map_err(runtime)?;
    write_line_chart(
        &out.join("mean_length.svg"),
        "mean episode length",
        "actions",
        &[Series { name: "mean length", values: &mean_length }],
    )
    .map_err(runtime)?;
    write_line_chart(
        &out.join("effective_penalty.svg"),
        "effective penalty",
        "lambda x mean excess",
        &[Series { name: "effective penalty", values: &effective }],
    )
    .map_err(runtime)?;
    Ok(())
}

fn train_command(args: &CommonArgs) -> Result<(), CliError> {
    let mut cfg: TrainConfig = load_config(&args.config)?;
    apply_overrides(&mut cfg, args);
    cfg.validate().map_err(usage)?;
    let tasks = load_tasks(&cfg, &args.config)?;
    ensure_out_dir(&args.out)?;
    log_debug(&format!("resolved config: {}", serde_json::to_string(&cfg).unwrap_or_default()));

    write_manifest(&args.out, "train", &cfg, Some(&tasks))?;
    let history = run_training(&cfg, &tasks, &args.out)?;
    if let Some(last) = history.metrics.last() {
        log_info(&format!(
            "train: {} iterations, final satisfaction {}, mean length {}, lambda {}",
            history.metrics.len(),
            format_sig6(last.satisfaction_rate),
            format_sig6(last.mean_length),
            format_sig6(last.lambda),
        ));
    }
    Ok(())
}

const ABLATION_ARMS: [(&str, ControllerKind, PenaltyKind); 4] = [
    ("adaptive-one-sided", ControllerKind::Adaptive, PenaltyKind::OneSided),
    ("constant-one-sided", ControllerKind::Constant, PenaltyKind::OneSided),
    ("adaptive-two-sided", ControllerKind::Adaptive, PenaltyKind::TwoSided),
    ("constant-two-sided", ControllerKind::Constant, PenaltyKind::TwoSided),
];

fn ablate_command(args: &CommonArgs) -> Result<(), CliError> {
    let mut base: TrainConfig = load_config(&args.config)?;
    apply_overrides(&mut base, args);
    base.validate().map_err(usage)?;
    let tasks = load_tasks(&base, &args.config)?;
    ensure_out_dir(&args.out)?;
    write_manifest(&args.out, "ablate", &base, Some(&tasks))?;

    let mut histories = Vec::new();
    for (name, controller, penalty) in ABLATION_ARMS {
        let mut cfg = base.clone();
        cfg.controller = controller;
        cfg.penalty = penalty;
        let arm_dir = args.out.join(name);
        ensure_out_dir(&arm_dir)?;
        write_manifest(&arm_dir, "train", &cfg, Some(&tasks))?;
        let history = run_training(&cfg, &tasks, &arm_dir)?;
        log_info(&format!("ablate: finished arm {name}"));
        histories.push((name, history));
    }

    let rows = histories.iter().map(|(_, h)| h.metrics.len()).min().unwrap_or(0);
    let mut csv = String::from("iteration");
    for (name, _) in &histories {
        let tag = name.replace('-', "_");
        csv.push_str(&format!(
            ",{tag}_satisfaction_rate,{tag}_lambda,{tag}_mean_length,{tag}_mean_accuracy"
        ));
    }
    csv.push('\n');
    for i in 0..rows {
        csv.push_str(&i.to_string());
        for (_, history) in &histories {
            let m = &history.metrics[i];
            csv.push_str(&format!(
                ",{},{},{},{}",
                format_sig6(m.satisfaction_rate),
                format_sig6(m.lambda),
                format_sig6(m.mean_length),
                format_sig6(m.mean_accuracy),
            ));
        }
        csv.push('\n');
    }
    let path = args.out.join("comparison.csv");
    std::fs::write(&path, csv)
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Held-out evaluation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Policy checkpoint to evaluate.
    pub policy_path: String,
    /// Task-set file; the default benchmark when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks_path: Option<String>,
    /// Length budget used for satisfaction accounting.
    pub target_length: usize,
    #[serde(default = "default_rollouts_per_task")]
    pub rollouts_per_task: usize,
    pub seed: u64,
}

fn default_rollouts_per_task() -> usize {
    32
}

fn eval_command(args: &CommonArgs) -> Result<(), CliError> {
    let mut cfg: EvalConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.rollouts_per_task == 0 || cfg.target_length == 0 {
        return Err(usage("rollouts_per_task and target_length must be positive"));
    }
    let policy_path = resolve_relative(&args.config, &cfg.policy_path);
    let policy = PolicyParams::load(&policy_path).map_err(usage)?;
    let tasks = match &cfg.tasks_path {
        Some(p) => TaskSet::load(&resolve_relative(&args.config, p)).map_err(usage)?,
        None => TaskSet::default_benchmark(),
    };
    if policy.state_capacity() < tasks.max_episode_length() {
        return Err(usage(format!(
            "policy covers {} states but the task set needs {}",
            policy.state_capacity(),
            tasks.max_episode_length()
        )));
    }
    ensure_out_dir(&args.out)?;
    write_manifest(&args.out, "eval", &cfg, Some(&tasks))?;

    let mut csv = String::from(
        "task_id,required_length,mean_length,accuracy,satisfaction_rate\n",
    );
    let mut total_len = 0.0;
    let mut total_correct = 0usize;
    let mut total_satisfied = 0usize;
    let mut total = 0usize;
    for (task_index, task) in tasks.tasks.iter().enumerate() {
        let mut len_sum = 0usize;
        let mut correct = 0usize;
        let mut satisfied = 0usize;
        for i in 0..cfg.rollouts_per_task {
            let seed =
                derive_seed(&[cfg.seed, STREAM_EVAL, task_index as u64, i as u64]);
            let rollout = envsim::sample_rollout(&policy, task, seed).map_err(runtime)?;
            len_sum += rollout.length;
            correct += rollout.correct as usize;
            satisfied += (rollout.length <= cfg.target_length) as usize;
        }
        let n = cfg.rollouts_per_task;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            task.id,
            task.required_length,
            format_sig6(len_sum as f64 / n as f64),
            format_sig6(correct as f64 / n as f64),
            format_sig6(satisfied as f64 / n as f64),
        ));
        total_len += len_sum as f64;
        total_correct += correct;
        total_satisfied += satisfied;
        total += n;
    }
    let path = args.out.join("eval.csv");
    std::fs::write(&path, csv)
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;

    let summary = format!(
        "eval: tasks {}, rollouts {}, mean_length {}, accuracy {}, satisfaction {}",
        tasks.tasks.len(),
        total,
        format_sig6(total_len / total as f64),
        format_sig6(total_correct as f64 / total as f64),
        format_sig6(total_satisfied as f64 / total as f64),
    );
    println!("{summary}");
    Ok(())
}

/// Behavior-analysis settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// JSONL of `{id, text}` records, or a JSON array of rollouts.
    pub input_path: String,
    /// "jsonl" or "rollouts"; sniffed from the file when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    /// Keyword groups; the built-in defaults when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyword_groups: Option<KeywordGroups>,
}

#[derive(Deserialize)]
struct TextRecord {
    #[serde(default)]
    #[allow(dead_code)]
    id: serde_json::Value,
    text: String,
}

fn analyze_command(args: &CommonArgs) -> Result<(), CliError> {
    let cfg: AnalyzeConfig = load_config(&args.config)?;
    let groups = cfg.keyword_groups.clone().unwrap_or_default();
    groups.validate().map_err(usage)?;
    let input = resolve_relative(&args.config, &cfg.input_path);
    let text = std::fs::read_to_string(&input)
        .map_err(|e| usage(format!("cannot read input {}: {e}", input.display())))?;

    let format = match cfg.format.as_deref() {
        Some("jsonl") => "jsonl",
        Some("rollouts") => "rollouts",
        Some(other) => return Err(usage(format!("unknown input format '{other}'"))),
        None => {
            if input.extension().is_some_and(|e| e.eq_ignore_ascii_case("jsonl")) {
                "jsonl"
            } else if text.trim_start().starts_with('[') {
                "rollouts"
            } else {
                "jsonl"
            }
        }
    };

    let stats: BehaviorStats = if format == "rollouts" {
        let rollouts: Vec<Rollout> = serde_json::from_str(&text)
            .map_err(|e| runtime(format!("malformed rollout JSON {}: {e}", input.display())))?;
        if rollouts.is_empty() {
            return Err(runtime(format!("no rollouts in {}", input.display())));
        }
        analysis::rollout_behavior_stats(&rollouts).map_err(runtime)?
    } else {
        let mut texts = Vec::new();
        let mut skipped = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<TextRecord>(line) {
                Ok(record) => texts.push(record.text),
                Err(e) => {
                    skipped += 1;
                    eprintln!("warning: skipping malformed record at line {}: {e}", lineno + 1);
                }
            }
        }
        if texts.is_empty() {
            return Err(runtime(format!(
                "no valid records in {} ({skipped} malformed)",
                input.display()
            )));
        }
        if skipped > 0 {
            log_info(&format!("analyze: skipped {skipped} malformed records"));
        }
        analysis::text_behavior_stats(texts.iter().map(|s| s.as_str()), &groups)
            .map_err(runtime)?
    };

    ensure_out_dir(&args.out)?;
    write_manifest(&args.out, "analyze", &cfg, None)?;
    let csv = format!(
        "group,mean_count\nsummary,{}\nrethink,{}\nplan,{}\nmean_length,{}\nsample_count,{}\n",
        format_sig6(stats.mean_summary),
        format_sig6(stats.mean_rethink),
        format_sig6(stats.mean_plan),
        format_sig6(stats.mean_length),
        stats.sample_count,
    );
    let path = args.out.join("behavior.csv");
    std::fs::write(&path, csv)
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Distribution description for synthesizing task sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenTasksConfig {
    pub count: usize,
    pub required_length_min: usize,
    pub required_length_max: usize,
    pub max_length: usize,
    pub base_success: f64,
    pub seed: u64,
}

fn gen_tasks_command(args: &CommonArgs) -> Result<(), CliError> {
    use rand::{Rng, SeedableRng};
    let mut cfg: GenTasksConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.count == 0 {
        return Err(usage("count must be positive"));
    }
    if cfg.required_length_min == 0
        || cfg.required_length_min > cfg.required_length_max
        || cfg.required_length_max > cfg.max_length
    {
        return Err(usage(
            "require 0 < required_length_min <= required_length_max <= max_length",
        ));
    }
    if !(0.0..1.0).contains(&cfg.base_success) {
        return Err(usage("base_success must lie in [0, 1)"));
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let tasks: Vec<TaskSpec> = (0..cfg.count as u64)
        .map(|id| {
            let required =
                rng.random_range(cfg.required_length_min..=cfg.required_length_max);
            TaskSpec::new(id, required, cfg.max_length, cfg.base_success)
        })
        .collect();
    let set = TaskSet::with_uniform_weights(tasks).map_err(usage)?;

    ensure_out_dir(&args.out)?;
    write_manifest(&args.out, "gen-tasks", &cfg, Some(&set))?;
    set.save(&args.out.join("tasks.json")).map_err(runtime)?;
    log_info(&format!("gen-tasks: wrote {} tasks", set.tasks.len()));
    Ok(())
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        runtime(err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_config_defaults_and_unknown_keys() {
        let cfg: EvalConfig = serde_json::from_str(
            r#"{"policy_path": "p.json", "target_length": 48, "seed": 3}"#,
        )
        .unwrap();
        assert_eq!(cfg.rollouts_per_task, 32);
        assert!(cfg.tasks_path.is_none());

        let bad = serde_json::from_str::<EvalConfig>(
            r#"{"policy_path": "p", "target_length": 1, "seed": 0, "zzz": 1}"#,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn relative_paths_resolve_against_the_config_directory() {
        let resolved = resolve_relative(Path::new("/a/b/config.json"), "tasks.json");
        assert_eq!(resolved, Path::new("/a/b/tasks.json"));
        let absolute = resolve_relative(Path::new("/a/b/config.json"), "/x/tasks.json");
        assert_eq!(absolute, Path::new("/x/tasks.json"));
    }

    #[test]
    fn missing_config_is_a_usage_error() {
        let args = CommonArgs {
            config: PathBuf::from("/definitely/not/here.json"),
            out: PathBuf::from("/tmp/leash-test-unused"),
            seed: None,
            iterations: None,
            controller: None,
            penalty: None,
        };
        match train_command(&args) {
            Err(CliError::Usage(msg)) => assert!(msg.contains("/definitely/not/here.json")),
            other => panic!("expected usage error, got {:?}", other.is_ok()),
        }
    }
}
