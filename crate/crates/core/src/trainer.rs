//! The outer training loop.
//!
//! Each iteration: freeze a policy snapshot, sample a batch of prompts and a
//! group of rollouts per prompt, shape rewards under the current penalty
//! coefficient, take one surrogate gradient step, estimate the batch
//! constraint violation, and let the controller move the coefficient.
//! Metrics are computed on the sampled batch before the policy update and
//! appended to a CSV stream as training runs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

use crate::dual::{self, ControllerKind, DualState};
use crate::envsim::{self, derive_seed, Rollout, TaskSet};
use crate::policy::{
    sgd_step, surrogate_gradient, GroupBatch, PolicyParams, SurrogateConfig, TabulatedPolicy,
};
use crate::shaping::{self, PenaltyKind, ShapedReward, ShapingParams};
use crate::{Error, Result};

/// Stop-logit far below the initial verbose window.
const INIT_FLOOR_LOGIT: f64 = -7.0;
/// Stop-logit in the shoulder band just below the window.
const INIT_RAMP_LOGIT: f64 = -4.2;
/// Width of the shoulder band, in states.
const INIT_RAMP_STATES: usize = 8;
/// Stop-logit at and beyond the initial verbose window.
const INIT_WINDOW_LOGIT: f64 = 6.0;

// Stream tags keeping the RNG hierarchies of one run disjoint.
const STREAM_PROMPTS: u64 = 1;
const STREAM_ROLLOUTS: u64 = 2;
const STREAM_FRESH_DUAL: u64 = 3;

/// Full configuration of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Prompts sampled per iteration.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Rollouts per prompt.
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    /// Length budget the run should satisfy in expectation.
    pub target_length: usize,
    pub iterations: usize,
    #[serde(default = "default_clip_low")]
    pub reward_clip_low: f64,
    #[serde(default = "default_clip_high")]
    pub reward_clip_high: f64,
    /// Initial penalty-coefficient state.
    #[serde(default)]
    pub dual: DualState,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default = "default_controller")]
    pub controller: ControllerKind,
    #[serde(default = "default_penalty")]
    pub penalty: PenaltyKind,
    pub global_seed: u64,
    /// Length around which initial episodes concentrate. Defaults to three
    /// past the target, putting the untrained policy just over budget.
    #[serde(default)]
    pub init_verbose_length: Option<usize>,
    /// Re-sample a fresh batch under the updated policy for the dual step
    /// instead of reusing the training batch.
    #[serde(default)]
    pub fresh_rollouts_for_dual: bool,
    /// Stop early once the violation stays small and the coefficient stops
    /// drifting over a trailing window.
    #[serde(default)]
    pub early_stop: bool,
    /// Task-set file consumed by the command-line front end; the library
    /// takes the task set as an argument.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks_path: Option<String>,
}

fn default_batch_size() -> usize {
    64
}
fn default_group_size() -> usize {
    8
}
fn default_clip_low() -> f64 {
    -1.0
}
fn default_clip_high() -> f64 {
    1.0
}
fn default_controller() -> ControllerKind {
    ControllerKind::Adaptive
}
fn default_penalty() -> PenaltyKind {
    PenaltyKind::OneSided
}

impl TrainConfig {
    /// A configuration with every tunable at its default, ready for the
    /// given budget and seed.
    pub fn new(target_length: usize, iterations: usize, global_seed: u64) -> Self {
        TrainConfig {
            batch_size: default_batch_size(),
            group_size: default_group_size(),
            target_length,
            iterations,
            reward_clip_low: default_clip_low(),
            reward_clip_high: default_clip_high(),
            dual: DualState::default(),
            surrogate: SurrogateConfig::default(),
            controller: default_controller(),
            penalty: default_penalty(),
            global_seed,
            init_verbose_length: None,
            fresh_rollouts_for_dual: false,
            early_stop: false,
            tasks_path: None,
        }
    }

    pub fn shaping_params(&self) -> ShapingParams {
        ShapingParams {
            target_length: self.target_length,
            reward_clip_low: self.reward_clip_low,
            reward_clip_high: self.reward_clip_high,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.group_size < 2 {
            return Err(Error::InvalidConfig(
                "group_size must be at least 2 so group advantages are defined".into(),
            ));
        }
        self.shaping_params().validate()?;
        self.dual.validate()?;
        self.surrogate.validate()?;
        if let Some(v) = self.init_verbose_length {
            if v == 0 {
                return Err(Error::InvalidConfig("init_verbose_length must be positive".into()));
            }
        }
        Ok(())
    }

    /// Hex digest of the canonical JSON form; identifies a run's inputs.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The initial policy for a task set: a verbose stop-window placed just
    /// past the length budget, sized so the table covers the longest episode.
    ///
    /// Stopping is nearly impossible early on, unlikely in a short shoulder
    /// band below the window, and likely from the window on, so initial
    /// episodes concentrate just over budget with a thin shorter tail.
    pub fn initial_policy(&self, tasks: &TaskSet) -> Result<PolicyParams> {
        use crate::envsim::{ACTION_COUNT, STOP_INDEX};
        let max_len = tasks.max_episode_length();
        let (buckets, width) = PolicyParams::bucket_layout_for(max_len);
        let verbose_length = self.init_verbose_length.unwrap_or(self.target_length + 3);
        let window_start_state = verbose_length.saturating_sub(1).min(max_len.saturating_sub(1));
        let ramp_start_state = window_start_state.saturating_sub(INIT_RAMP_STATES);
        let mut logits = vec![[0.0; ACTION_COUNT]; buckets];
        for (bucket, row) in logits.iter_mut().enumerate() {
            let state = bucket * width;
            row[STOP_INDEX] = if state >= window_start_state {
                INIT_WINDOW_LOGIT
            } else if state >= ramp_start_state {
                INIT_RAMP_LOGIT
            } else {
                INIT_FLOOR_LOGIT
            };
        }
        PolicyParams::from_logits(logits, width, 0)
    }
}

/// Per-iteration training metrics, computed on the sampled batch before the
/// policy update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Share of rollouts with length at most the budget.
    pub satisfaction_rate: f64,
    /// Penalty coefficient used for this batch's shaping.
    pub lambda: f64,
    /// Coefficient times the batch-mean one-sided penalty.
    pub effective_penalty: f64,
    pub mean_length: f64,
    pub mean_accuracy: f64,
    pub mean_shaped_reward: f64,
    /// Violation estimate consumed by the dual update.
    pub violation_estimate: f64,
}

impl IterationMetrics {
    fn validate_finite(&self) -> Result<()> {
        let fields = [
            ("satisfaction_rate", self.satisfaction_rate),
            ("lambda", self.lambda),
            ("effective_penalty", self.effective_penalty),
            ("mean_length", self.mean_length),
            ("mean_accuracy", self.mean_accuracy),
            ("mean_shaped_reward", self.mean_shaped_reward),
            ("violation_estimate", self.violation_estimate),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(Error::NonFiniteAtIteration {
                    what: format!("metric {name}"),
                    iteration: self.iteration,
                });
            }
        }
        Ok(())
    }
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct TrainHistory {
    pub config_fingerprint: String,
    pub metrics: Vec<IterationMetrics>,
    pub final_policy: PolicyParams,
    pub final_dual: DualState,
}

/// Parse a [`TrainConfig`] from its JSON document, rejecting unknown keys.
pub fn train_config_from_json(json: &str) -> Result<TrainConfig> {
    serde_json::from_str(json)
        .map_err(|e| Error::InvalidConfig(format!("malformed training config: {e}")))
}

/// Serialize a [`TrainConfig`] to JSON.
pub fn train_config_to_json(cfg: &TrainConfig) -> Result<String> {
    serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::InvalidConfig(format!("config does not serialize: {e}")))
}

/// Coefficient times the batch-mean one-sided penalty: the realized shaping
/// pressure of one batch.
pub fn effective_penalty(lambda: f64, penalties: &[f64]) -> Result<f64> {
    if penalties.is_empty() {
        return Err(Error::Empty { context: "effective penalty over zero samples" });
    }
    Ok(lambda * penalties.iter().sum::<f64>() / penalties.len() as f64)
}

/// Header of the metrics CSV stream.
pub const METRICS_CSV_HEADER: &str =
    "iteration,satisfaction_rate,lambda,effective_penalty,mean_length,mean_accuracy,mean_shaped_reward,violation_estimate";

/// Format a float with six significant digits, positionally where compact
/// and in scientific notation otherwise.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0.00000".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let mut exp = x.abs().log10().floor() as i32;
    if x.abs() < 10f64.powi(exp) {
        exp -= 1;
    }
    if x.abs() >= 10f64.powi(exp + 1) {
        exp += 1;
    }
    // Rounding to six digits can carry into the next decade.
    let scale = 10f64.powi(5 - exp);
    let rounded = (x * scale).round() / scale;
    if rounded.abs() >= 10f64.powi(exp + 1) {
        exp += 1;
    }
    if !(-4..6).contains(&exp) {
        format!("{:.5}e{}", rounded / 10f64.powi(exp), exp)
    } else {
        format!("{:.*}", (5 - exp).max(0) as usize, rounded)
    }
}

/// One CSV row, without trailing newline.
pub fn metrics_csv_row(m: &IterationMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        m.iteration,
        format_sig6(m.satisfaction_rate),
        format_sig6(m.lambda),
        format_sig6(m.effective_penalty),
        format_sig6(m.mean_length),
        format_sig6(m.mean_accuracy),
        format_sig6(m.mean_shaped_reward),
        format_sig6(m.violation_estimate),
    )
}

struct SampledBatch {
    batches: Vec<GroupBatch>,
    lengths: Vec<usize>,
    penalties: Vec<f64>,
    correct: Vec<bool>,
    signals: Vec<f64>,
}

fn sample_batch(
    snapshot: &PolicyParams,
    tasks: &TaskSet,
    cfg: &TrainConfig,
    lambda: f64,
    iteration: usize,
    stream: u64,
) -> Result<SampledBatch> {
    use rand::SeedableRng;
    let shaping_params = cfg.shaping_params();
    let table = TabulatedPolicy::new(snapshot);
    let mut prompt_rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(&[
        cfg.global_seed,
        stream,
        STREAM_PROMPTS,
        iteration as u64,
    ]));

    let mut batches = Vec::with_capacity(cfg.batch_size);
    let mut lengths = Vec::with_capacity(cfg.batch_size * cfg.group_size);
    let mut penalties = Vec::with_capacity(cfg.batch_size * cfg.group_size);
    let mut correct = Vec::with_capacity(cfg.batch_size * cfg.group_size);
    let mut all_signals = Vec::with_capacity(cfg.batch_size * cfg.group_size);

    for prompt_index in 0..cfg.batch_size {
        let task = &tasks.tasks[tasks.sample_index(&mut prompt_rng)];
        let mut rollouts: Vec<Rollout> = Vec::with_capacity(cfg.group_size);
        for sample_index in 0..cfg.group_size {
            let seed = derive_seed(&[
                cfg.global_seed,
                stream,
                STREAM_ROLLOUTS,
                iteration as u64,
                prompt_index as u64,
                sample_index as u64,
            ]);
            rollouts.push(envsim::sample_rollout(&table, task, seed)?);
        }

        let mut shaped: Vec<ShapedReward> = Vec::with_capacity(cfg.group_size);
        let mut signals: Vec<f64> = Vec::with_capacity(cfg.group_size);
        for rollout in &rollouts {
            let reward = shaping::task_reward(rollout.correct);
            let penalty = shaping::one_sided_penalty(rollout.length, cfg.target_length)?;
            shaped.push(shaping::shaped_reward(reward, lambda, penalty, &shaping_params));
            signals.push(shaping::reward_signal(
                cfg.penalty,
                reward,
                lambda,
                rollout.length,
                &shaping_params,
            )?);

            lengths.push(rollout.length);
            penalties.push(penalty);
            correct.push(rollout.correct);
            all_signals.push(*signals.last().unwrap());
        }

        batches.push(GroupBatch::new(
            prompt_index,
            rollouts,
            shaped,
            signals,
            snapshot.version(),
        )?);
    }

    Ok(SampledBatch { batches, lengths, penalties, correct, signals: all_signals })
}

/// Run one full iteration, returning the updated policy, the updated dual
/// state, and the batch metrics.
pub fn run_iteration(
    policy: &PolicyParams,
    dual_state: &DualState,
    tasks: &TaskSet,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<(PolicyParams, DualState, IterationMetrics)> {
    let snapshot = policy.snapshot();
    let lambda = dual_state.lambda;
    let batch = sample_batch(&snapshot, tasks, cfg, lambda, iteration, 0)?;

    let total = batch.lengths.len() as f64;
    let satisfied =
        batch.lengths.iter().filter(|&&l| l <= cfg.target_length).count() as f64;
    let batch_violation = dual::estimate_violation(&batch.lengths, cfg.target_length)?;

    let gradient = surrogate_gradient(policy, &snapshot, &batch.batches, &cfg.surrogate)
        .map_err(|e| at_iteration(e, iteration))?;
    let next_policy =
        sgd_step(policy, &gradient, &cfg.surrogate).map_err(|e| at_iteration(e, iteration))?;

    let dual_violation = if cfg.fresh_rollouts_for_dual {
        let fresh = sample_batch(&next_policy.snapshot(), tasks, cfg, lambda, iteration, STREAM_FRESH_DUAL)?;
        dual::estimate_violation(&fresh.lengths, cfg.target_length)?
    } else {
        batch_violation
    };
    let next_dual = cfg.controller.apply(dual_state, &dual_violation);

    let metrics = IterationMetrics {
        iteration,
        satisfaction_rate: satisfied / total,
        lambda,
        effective_penalty: effective_penalty(lambda, &batch.penalties)?,
        mean_length: batch.lengths.iter().sum::<usize>() as f64 / total,
        mean_accuracy: batch.correct.iter().filter(|&&c| c).count() as f64 / total,
        mean_shaped_reward: batch.signals.iter().sum::<f64>() / total,
        violation_estimate: dual_violation.value,
    };
    metrics.validate_finite()?;

    Ok((next_policy, next_dual, metrics))
}

fn at_iteration(err: Error, iteration: usize) -> Error {
    match err {
        Error::NonFinite { what } => Error::NonFiniteAtIteration { what, iteration },
        other => other,
    }
}

fn early_stop_reached(metrics: &[IterationMetrics]) -> bool {
    const WINDOW: usize = 20;
    const VIOLATION_TOL: f64 = 0.02;
    const LAMBDA_DRIFT_TOL: f64 = 1e-3;
    if metrics.len() < WINDOW {
        return false;
    }
    let window = &metrics[metrics.len() - WINDOW..];
    let calm = window.iter().all(|m| m.violation_estimate.abs() < VIOLATION_TOL);
    let lambda_min = window.iter().map(|m| m.lambda).fold(f64::INFINITY, f64::min);
    let lambda_max = window.iter().map(|m| m.lambda).fold(f64::NEG_INFINITY, f64::max);
    calm && (lambda_max - lambda_min) < LAMBDA_DRIFT_TOL
}

/// Train for the configured number of iterations, streaming metrics to
/// `metrics_path` when given.
pub fn train(cfg: &TrainConfig, tasks: &TaskSet, metrics_path: Option<&Path>) -> Result<TrainHistory> {
    cfg.validate()?;
    tasks.validate()?;

    let mut policy = cfg.initial_policy(tasks)?;
    let mut dual_state = cfg.dual.clone();
    dual_state.validate()?;

    let mut writer = match metrics_path {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = std::io::BufWriter::new(file);
            writeln!(w, "{METRICS_CSV_HEADER}").map_err(|e| Error::io(path, e))?;
            Some((w, path))
        }
        None => None,
    };

    let mut metrics = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let (next_policy, next_dual, m) =
            run_iteration(&policy, &dual_state, tasks, cfg, iteration)?;
        policy = next_policy;
        dual_state = next_dual;
        if let Some((w, path)) = writer.as_mut() {
            writeln!(w, "{}", metrics_csv_row(&m)).map_err(|e| Error::io(*path, e))?;
            w.flush().map_err(|e| Error::io(*path, e))?;
        }
        metrics.push(m);
        if cfg.early_stop && early_stop_reached(&metrics) {
            break;
        }
    }

    Ok(TrainHistory {
        config_fingerprint: cfg.fingerprint(),
        metrics,
        final_policy: policy,
        final_dual: dual_state,
    })
}
