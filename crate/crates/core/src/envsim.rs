//! Synthetic think-then-answer environments.
//!
//! An episode is a stop/continue process: at each step the policy either
//! emits one more thinking action or stops. The environment state is just the
//! number of actions taken so far. Correctness is drawn at termination from a
//! length-dependent success probability, so the accuracy-versus-length
//! tension of long-form reasoning is recreated without any text: stopping
//! before a task's required length is usually wrong, thinking past it adds
//! nothing.
//!
//! Three of the four thinking actions are marked variants (summary, rethink,
//! plan) with identical dynamics; they exist only so behavior statistics over
//! rollouts have something to count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::{Error, Result};

/// Number of distinct actions.
pub const ACTION_COUNT: usize = 5;

/// One step of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Think,
    ThinkSummary,
    ThinkRethink,
    ThinkPlan,
    Stop,
}

impl Action {
    pub const ALL: [Action; ACTION_COUNT] = [
        Action::Think,
        Action::ThinkSummary,
        Action::ThinkRethink,
        Action::ThinkPlan,
        Action::Stop,
    ];

    pub fn index(self) -> usize {
        match self {
            Action::Think => 0,
            Action::ThinkSummary => 1,
            Action::ThinkRethink => 2,
            Action::ThinkPlan => 3,
            Action::Stop => 4,
        }
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }

    pub fn is_stop(self) -> bool {
        self == Action::Stop
    }
}

/// Index of [`Action::Stop`] inside a probability vector.
pub const STOP_INDEX: usize = 4;

/// A synthetic prompt: how much thinking it requires and how forgiving it is
/// to early stopping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: u64,
    /// Episode length at and beyond which the answer is certainly correct.
    pub required_length: usize,
    /// Hard cap on episode length; the episode is cut off there.
    pub max_length: usize,
    /// Success probability when stopping before `required_length`.
    pub base_success: f64,
    /// Opaque reference label; defaults to `task-<id>` when absent.
    #[serde(default)]
    pub reference_answer: String,
}

impl TaskSpec {
    pub fn new(id: u64, required_length: usize, max_length: usize, base_success: f64) -> Self {
        TaskSpec {
            id,
            required_length,
            max_length,
            base_success,
            reference_answer: format!("task-{id}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.required_length == 0 || self.required_length > self.max_length {
            return Err(Error::InvalidTask {
                id: self.id,
                reason: format!(
                    "require 0 < required_length <= max_length, got required_length={} max_length={}",
                    self.required_length, self.max_length
                ),
            });
        }
        if !(0.0..1.0).contains(&self.base_success) {
            return Err(Error::InvalidTask {
                id: self.id,
                reason: format!("base_success must lie in [0, 1), got {}", self.base_success),
            });
        }
        Ok(())
    }
}

/// How correctness depends on episode length.
#[derive(Debug, Default, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CorrectnessModel {
    /// `base_success` below the required length, certainty at and beyond it.
    /// The default and the form all exact computations assume.
    #[default]
    Step,
    /// Smooth variant: `base + (1 - base) * sigmoid(steepness * (len - required))`.
    Sigmoid { steepness: f64 },
}

/// Success probability of stopping at `length` under the step model.
pub fn success_probability(task: &TaskSpec, length: usize) -> Result<f64> {
    success_probability_with(task, length, CorrectnessModel::Step)
}

/// Success probability under an explicit correctness model.
pub fn success_probability_with(
    task: &TaskSpec,
    length: usize,
    model: CorrectnessModel,
) -> Result<f64> {
    if length > task.max_length {
        return Err(Error::LengthExceedsCap { length, max_length: task.max_length });
    }
    let p = match model {
        CorrectnessModel::Step => {
            if length < task.required_length {
                task.base_success
            } else {
                1.0
            }
        }
        CorrectnessModel::Sigmoid { steepness } => {
            let x = steepness * (length as f64 - task.required_length as f64);
            task.base_success + (1.0 - task.base_success) / (1.0 + (-x).exp())
        }
    };
    Ok(p)
}

/// A weighted collection of tasks standing in for the prompt distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    pub tasks: Vec<TaskSpec>,
    /// Nonnegative sampling weights, one per task, summing to one.
    pub sampling_weights: Vec<f64>,
}

/// On-disk form of a task set.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskSetFile {
    schema_version: u32,
    tasks: Vec<TaskSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sampling_weights: Option<Vec<f64>>,
}

/// Current task-set file schema version.
pub const TASK_SET_SCHEMA_VERSION: u32 = 1;

impl TaskSet {
    /// Build a task set with uniform sampling weights.
    pub fn with_uniform_weights(tasks: Vec<TaskSpec>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::InvalidTaskSet("task set must be non-empty".into()));
        }
        let w = 1.0 / tasks.len() as f64;
        let set = TaskSet { sampling_weights: vec![w; tasks.len()], tasks };
        set.validate()?;
        Ok(set)
    }

    /// The default benchmark: 32 tasks whose required lengths sweep 20..=120
    /// evenly, capped at 256 steps, with a 5% base success rate.
    pub fn default_benchmark() -> TaskSet {
        let tasks = (0..32u64)
            .map(|k| {
                let required = (20.0 + k as f64 * 100.0 / 31.0).round() as usize;
                TaskSpec::new(k, required, 256, 0.05)
            })
            .collect();
        TaskSet::with_uniform_weights(tasks).expect("default benchmark is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::InvalidTaskSet("task set must be non-empty".into()));
        }
        if self.sampling_weights.len() != self.tasks.len() {
            return Err(Error::InvalidTaskSet(format!(
                "{} weights for {} tasks",
                self.sampling_weights.len(),
                self.tasks.len()
            )));
        }
        for task in &self.tasks {
            task.validate()?;
        }
        let mut sum = 0.0;
        for &w in &self.sampling_weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidTaskSet(format!("invalid sampling weight {w}")));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidTaskSet(format!("sampling weights sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn task_by_id(&self, id: u64) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }

    /// Largest episode cap across the set.
    pub fn max_episode_length(&self) -> usize {
        self.tasks.iter().map(|t| t.max_length).max().unwrap_or(0)
    }

    /// Draw a task index according to the sampling weights.
    pub fn sample_index(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &w) in self.sampling_weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.tasks.len() - 1
    }

    pub fn to_json(&self) -> String {
        let file = TaskSetFile {
            schema_version: TASK_SET_SCHEMA_VERSION,
            tasks: self.tasks.clone(),
            sampling_weights: Some(self.sampling_weights.clone()),
        };
        serde_json::to_string_pretty(&file).expect("task set serializes")
    }

    pub fn from_json(json: &str) -> Result<TaskSet> {
        let file: TaskSetFile = serde_json::from_str(json)
            .map_err(|e| Error::InvalidTaskSet(format!("malformed task set JSON: {e}")))?;
        if file.schema_version != TASK_SET_SCHEMA_VERSION {
            return Err(Error::InvalidTaskSet(format!(
                "unsupported schema_version {}, expected {}",
                file.schema_version, TASK_SET_SCHEMA_VERSION
            )));
        }
        let mut tasks = file.tasks;
        for task in &mut tasks {
            if task.reference_answer.is_empty() {
                task.reference_answer = format!("task-{}", task.id);
            }
        }
        let set = match file.sampling_weights {
            Some(sampling_weights) => TaskSet { tasks, sampling_weights },
            None => TaskSet::with_uniform_weights(tasks)?,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TaskSet> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TaskSet::from_json(&text).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })
    }
}

/// A distribution over actions conditioned on the number of steps taken so
/// far. Implemented by the trainable tabular policy and by the deterministic
/// policies used in tests and exact computations.
pub trait StatePolicy {
    /// Action probabilities after `think_count` prior steps. Must be
    /// nonnegative and sum to one.
    fn action_probs(&self, think_count: usize) -> Result<[f64; ACTION_COUNT]>;
}

/// One sampled trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub task_id: u64,
    pub actions: Vec<Action>,
    /// Number of actions, including the terminal stop when present.
    pub length: usize,
    pub correct: bool,
    /// Log-probability of each action under the policy it was sampled from.
    pub behavior_logprobs: Vec<f64>,
    pub seed: u64,
}

/// Pass-through correctness check; the Bernoulli draw at termination stands
/// in for comparing an answer against its reference.
pub fn is_equivalent(rollout: &Rollout) -> bool {
    rollout.correct
}

/// Sample one episode from `policy` on `task`, deterministically in
/// `(policy, task, seed)`.
///
/// Actions are drawn step by step; the episode ends at the first stop action
/// or is cut off at `task.max_length`. Correctness is then drawn from the
/// step-model success probability at the realized length, using the same RNG
/// stream.
pub fn sample_rollout(
    policy: &impl StatePolicy,
    task: &TaskSpec,
    seed: u64,
) -> Result<Rollout> {
    sample_rollout_with_model(policy, task, seed, CorrectnessModel::Step)
}

/// [`sample_rollout`] with an explicit correctness model.
pub fn sample_rollout_with_model(
    policy: &impl StatePolicy,
    task: &TaskSpec,
    seed: u64,
    model: CorrectnessModel,
) -> Result<Rollout> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actions = Vec::new();
    let mut behavior_logprobs = Vec::new();

    while actions.len() < task.max_length {
        let probs = policy.action_probs(actions.len())?;
        let action = draw_action(&probs, &mut rng);
        let p = probs[action.index()];
        if !p.is_finite() || p <= 0.0 {
            return Err(Error::NonFinite {
                what: format!("log-probability of sampled action at step {}", actions.len()),
            });
        }
        behavior_logprobs.push(p.ln());
        actions.push(action);
        if action.is_stop() {
            break;
        }
    }

    let length = actions.len();
    let p_success = success_probability_with(task, length, model)?;
    let correct = rng.random::<f64>() < p_success;

    Ok(Rollout { task_id: task.id, actions, length, correct, behavior_logprobs, seed })
}

fn draw_action(probs: &[f64; ACTION_COUNT], rng: &mut impl Rng) -> Action {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Action::ALL[i];
        }
    }
    Action::Stop
}

/// Derive an independent stream seed from a hierarchy of indices
/// (for rollouts: global seed, iteration, prompt index, sample index).
/// SplitMix64 finalization over each component keeps streams decorrelated.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state: u64 = 0x6A09_E667_F3BC_C908;
    for &part in parts {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(part);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

/// Deterministic test/verification policies over the stop/continue state.
pub mod fixed_policies {
    use super::{Result, StatePolicy, ACTION_COUNT, STOP_INDEX};

    /// Stops immediately in every state.
    pub struct AlwaysStop;

    impl StatePolicy for AlwaysStop {
        fn action_probs(&self, _think_count: usize) -> Result<[f64; ACTION_COUNT]> {
            let mut p = [0.0; ACTION_COUNT];
            p[STOP_INDEX] = 1.0;
            Ok(p)
        }
    }

    /// Never stops; episodes always run to the cap.
    pub struct NeverStop;

    impl StatePolicy for NeverStop {
        fn action_probs(&self, _think_count: usize) -> Result<[f64; ACTION_COUNT]> {
            let mut p = [0.0; ACTION_COUNT];
            p[0] = 1.0;
            Ok(p)
        }
    }

    /// Thinks deterministically and stops so the episode has exactly the
    /// given length.
    pub struct StopAtLength(pub usize);

    impl StatePolicy for StopAtLength {
        fn action_probs(&self, think_count: usize) -> Result<[f64; ACTION_COUNT]> {
            let mut p = [0.0; ACTION_COUNT];
            if think_count + 1 >= self.0 {
                p[STOP_INDEX] = 1.0;
            } else {
                p[0] = 1.0;
            }
            Ok(p)
        }
    }

    /// Uniform over all five actions in every state.
    pub struct Uniform;

    impl StatePolicy for Uniform {
        fn action_probs(&self, _think_count: usize) -> Result<[f64; ACTION_COUNT]> {
            Ok([1.0 / ACTION_COUNT as f64; ACTION_COUNT])
        }
    }
}
