//! Tabular stochastic policy and its clipped-surrogate update.
//!
//! The policy is a logit table over (state bucket, action), where the state
//! is the number of steps taken so far and buckets group consecutive states.
//! Updates follow the group-relative scheme: shaped rewards are standardized
//! within each prompt's group of rollouts, the per-trajectory advantage is
//! broadcast to its tokens, and the objective is the token-level mean of the
//! asymmetrically clipped importance-weighted advantage. One plain gradient
//! ascent step is taken per sampled batch.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::envsim::{Rollout, StatePolicy, ACTION_COUNT};
use crate::shaping::ShapedReward;
use crate::{Error, Result};

/// Guard added to the group standard deviation before dividing.
pub const ADVANTAGE_STD_GUARD: f64 = 1e-8;

/// Checkpoint schema version for serialized policies.
pub const POLICY_SCHEMA_VERSION: u32 = 1;

/// A gradient with the same shape as the logit table.
pub type GradientTable = Vec<[f64; ACTION_COUNT]>;

/// Logit table over (state bucket, action) plus an update counter used to
/// detect stale rollout batches.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    logits: Vec<[f64; ACTION_COUNT]>,
    bucket_width: usize,
    version: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    schema_version: u32,
    bucket_width: usize,
    logits: Vec<[f64; ACTION_COUNT]>,
    version: u64,
}

impl PolicyParams {
    /// All-zero logits: uniform action probabilities in every bucket.
    pub fn zeros(num_buckets: usize, bucket_width: usize) -> Result<Self> {
        if num_buckets == 0 || bucket_width == 0 {
            return Err(Error::InvalidConfig(
                "policy table needs at least one bucket of positive width".into(),
            ));
        }
        Ok(PolicyParams {
            logits: vec![[0.0; ACTION_COUNT]; num_buckets],
            bucket_width,
            version: 0,
        })
    }

    /// Bucket layout covering episodes up to `max_length`: width 1 while the
    /// table stays within 128 buckets, then a uniformly wider bucket.
    pub fn bucket_layout_for(max_length: usize) -> (usize, usize) {
        let max_length = max_length.max(1);
        let width = max_length.div_ceil(128).max(1);
        let buckets = max_length.div_ceil(width);
        (buckets, width)
    }

    /// A verbose initialization: stopping is strongly suppressed before
    /// `window_start_state` and likely from there on, so initial episodes run
    /// a little past the window start. Think logits stay at zero.
    pub fn stop_window_init(
        num_buckets: usize,
        bucket_width: usize,
        window_start_state: usize,
        floor_logit: f64,
        window_logit: f64,
    ) -> Result<Self> {
        let mut params = PolicyParams::zeros(num_buckets, bucket_width)?;
        for bucket in 0..num_buckets {
            let bucket_start = bucket * bucket_width;
            let logit = if bucket_start < window_start_state { floor_logit } else { window_logit };
            params.logits[bucket][crate::envsim::STOP_INDEX] = logit;
        }
        Ok(params)
    }

    /// Build a table from explicit logits.
    pub fn from_logits(
        logits: Vec<[f64; ACTION_COUNT]>,
        bucket_width: usize,
        version: u64,
    ) -> Result<Self> {
        if logits.is_empty() || bucket_width == 0 {
            return Err(Error::InvalidConfig(
                "policy table needs at least one bucket of positive width".into(),
            ));
        }
        if logits.iter().flatten().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite { what: "policy logit".into() });
        }
        Ok(PolicyParams { logits, bucket_width, version })
    }

    /// Overwrite a single logit. Used by probing code such as finite
    /// differences; does not touch the version.
    pub fn set_logit(&mut self, bucket: usize, action: usize, value: f64) -> Result<()> {
        if bucket >= self.logits.len() {
            return Err(Error::BucketOutOfRange { bucket, buckets: self.logits.len() });
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { what: "policy logit".into() });
        }
        self.logits[bucket][action] = value;
        Ok(())
    }

    pub fn num_buckets(&self) -> usize {
        self.logits.len()
    }

    pub fn bucket_width(&self) -> usize {
        self.bucket_width
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn logits(&self) -> &[[f64; ACTION_COUNT]] {
        &self.logits
    }

    /// Number of states the table covers.
    pub fn state_capacity(&self) -> usize {
        self.logits.len() * self.bucket_width
    }

    pub fn bucket_of(&self, think_count: usize) -> Result<usize> {
        let bucket = think_count / self.bucket_width;
        if bucket >= self.logits.len() {
            return Err(Error::BucketOutOfRange { bucket, buckets: self.logits.len() });
        }
        Ok(bucket)
    }

    /// Snapshot for rollout sampling: a copy whose version is frozen at the
    /// current value.
    pub fn snapshot(&self) -> PolicyParams {
        self.clone()
    }

    pub fn to_json(&self) -> String {
        let file = PolicyFile {
            schema_version: POLICY_SCHEMA_VERSION,
            bucket_width: self.bucket_width,
            logits: self.logits.clone(),
            version: self.version,
        };
        serde_json::to_string_pretty(&file).expect("policy serializes")
    }

    pub fn from_json(json: &str) -> Result<PolicyParams> {
        let file: PolicyFile = serde_json::from_str(json)
            .map_err(|e| Error::InvalidConfig(format!("malformed policy JSON: {e}")))?;
        if file.schema_version != POLICY_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported policy schema_version {}, expected {}",
                file.schema_version, POLICY_SCHEMA_VERSION
            )));
        }
        if file.logits.is_empty() || file.bucket_width == 0 {
            return Err(Error::InvalidConfig("policy table must be non-empty".into()));
        }
        if file.logits.iter().flatten().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite { what: "policy logit".into() });
        }
        Ok(PolicyParams {
            logits: file.logits,
            bucket_width: file.bucket_width,
            version: file.version,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<PolicyParams> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PolicyParams::from_json(&text)
            .map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })
    }
}

impl StatePolicy for PolicyParams {
    fn action_probs(&self, think_count: usize) -> Result<[f64; ACTION_COUNT]> {
        action_distribution(self, self.bucket_of(think_count)?)
    }
}

/// Softmax over the logit row of one bucket.
pub fn action_distribution(params: &PolicyParams, bucket: usize) -> Result<[f64; ACTION_COUNT]> {
    if bucket >= params.logits.len() {
        return Err(Error::BucketOutOfRange { bucket, buckets: params.logits.len() });
    }
    Ok(softmax(&params.logits[bucket]))
}

fn softmax(logits: &[f64; ACTION_COUNT]) -> [f64; ACTION_COUNT] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; ACTION_COUNT];
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

fn log_softmax(logits: &[f64; ACTION_COUNT]) -> [f64; ACTION_COUNT] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    let mut out = [0.0; ACTION_COUNT];
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - max - log_sum;
    }
    out
}

/// Action probabilities precomputed per bucket; used to sample many rollouts
/// from one frozen snapshot without recomputing softmax rows.
pub struct TabulatedPolicy<'a> {
    params: &'a PolicyParams,
    probs: Vec<[f64; ACTION_COUNT]>,
}

impl<'a> TabulatedPolicy<'a> {
    pub fn new(params: &'a PolicyParams) -> Self {
        let probs = params.logits.iter().map(softmax).collect();
        TabulatedPolicy { params, probs }
    }
}

impl StatePolicy for TabulatedPolicy<'_> {
    fn action_probs(&self, think_count: usize) -> Result<[f64; ACTION_COUNT]> {
        Ok(self.probs[self.params.bucket_of(think_count)?])
    }
}

/// Group-relative advantages: standardize rewards within the group using the
/// population standard deviation plus a small guard.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall { got: rewards.len() });
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + ADVANTAGE_STD_GUARD)).collect())
}

/// Clip thresholds for the importance ratio and the primal step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    /// Lower clip margin: ratios below `1 - eps_low` stop contributing gradient.
    pub eps_low: f64,
    /// Upper clip margin: ratios above `1 + eps_high` stop contributing gradient.
    pub eps_high: f64,
    /// Gradient ascent step size.
    pub learning_rate: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig { eps_low: 0.2, eps_high: 0.28, learning_rate: 20.0 }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        let margins_ok = self.eps_low.is_finite()
            && self.eps_high.is_finite()
            && self.eps_low > 0.0
            && self.eps_low < 1.0
            && self.eps_high > 0.0;
        if !margins_ok {
            return Err(Error::InvalidConfig(format!(
                "clip margins must satisfy 0 < eps_low < 1 and eps_high > 0, got {} / {}",
                self.eps_low, self.eps_high
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// All rollouts of one prompt together with their shaped rewards, the reward
/// signal actually optimized, and the group-relative advantages.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub prompt_index: usize,
    pub rollouts: Vec<Rollout>,
    /// One-sided shaping terms per rollout, kept for metrics regardless of
    /// which penalty form produced `signals`.
    pub shaped: Vec<ShapedReward>,
    /// Reward signal fed into advantage computation. Equals
    /// `shaped[i].clipped` under the default one-sided penalty.
    pub signals: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Version of the policy snapshot the rollouts were sampled from.
    pub snapshot_version: u64,
}

impl GroupBatch {
    /// Assemble a group and compute its advantages. All rollouts must belong
    /// to one task.
    pub fn new(
        prompt_index: usize,
        rollouts: Vec<Rollout>,
        shaped: Vec<ShapedReward>,
        signals: Vec<f64>,
        snapshot_version: u64,
    ) -> Result<GroupBatch> {
        if rollouts.len() != shaped.len() || rollouts.len() != signals.len() {
            return Err(Error::InvalidConfig(format!(
                "group arity mismatch: {} rollouts, {} shaped rewards, {} signals",
                rollouts.len(),
                shaped.len(),
                signals.len()
            )));
        }
        if let Some(first) = rollouts.first() {
            if rollouts.iter().any(|r| r.task_id != first.task_id) {
                return Err(Error::InvalidConfig(
                    "all rollouts in a group must share one task".into(),
                ));
            }
        }
        let advantages = group_advantages(&signals)?;
        Ok(GroupBatch { prompt_index, rollouts, shaped, signals, advantages, snapshot_version })
    }
}

/// Walk every token of every rollout in a fixed order, yielding the data the
/// objective and its gradient share.
fn for_each_token(
    params: &PolicyParams,
    snapshot: &PolicyParams,
    batches: &[GroupBatch],
    mut visit: impl FnMut(usize, usize, f64, f64, &[f64; ACTION_COUNT]),
) -> Result<usize> {
    for batch in batches {
        if batch.snapshot_version != snapshot.version {
            return Err(Error::SnapshotMismatch {
                batch: batch.snapshot_version,
                snapshot: snapshot.version,
            });
        }
    }
    let log_rows: Vec<[f64; ACTION_COUNT]> = params.logits.iter().map(log_softmax).collect();
    let prob_rows: Vec<[f64; ACTION_COUNT]> = params.logits.iter().map(softmax).collect();

    let mut tokens = 0usize;
    for batch in batches {
        for (rollout, &advantage) in batch.rollouts.iter().zip(&batch.advantages) {
            for (step, (action, &behavior_lp)) in
                rollout.actions.iter().zip(&rollout.behavior_logprobs).enumerate()
            {
                let bucket = params.bucket_of(step)?;
                let new_lp = log_rows[bucket][action.index()];
                let ratio = (new_lp - behavior_lp).exp();
                visit(bucket, action.index(), ratio, advantage, &prob_rows[bucket]);
                tokens += 1;
            }
        }
    }
    Ok(tokens)
}

/// Token-level clipped surrogate: the mean over all tokens of
/// `min(ratio * adv, clip(ratio, 1 - eps_low, 1 + eps_high) * adv)`, where the
/// ratio compares `params` against the behavior log-probabilities recorded at
/// sampling time and the trajectory advantage is broadcast to its tokens.
pub fn surrogate_objective(
    params: &PolicyParams,
    snapshot: &PolicyParams,
    batches: &[GroupBatch],
    cfg: &SurrogateConfig,
) -> Result<f64> {
    let mut sum = 0.0;
    let tokens = for_each_token(params, snapshot, batches, |_, _, ratio, advantage, _| {
        let unclipped = ratio * advantage;
        let clipped = ratio.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high) * advantage;
        sum += unclipped.min(clipped);
    })?;
    if tokens == 0 {
        return Err(Error::Empty { context: "surrogate objective over zero tokens" });
    }
    Ok(sum / tokens as f64)
}

/// Exact gradient of [`surrogate_objective`] with respect to every logit.
///
/// Tokens on the clipped branch contribute nothing; on the unclipped branch
/// the softmax chain rule gives `adv * ratio * (onehot(action) - probs)` for
/// the token's bucket row. Accumulation order is fixed so results are
/// bit-reproducible.
pub fn surrogate_gradient(
    params: &PolicyParams,
    snapshot: &PolicyParams,
    batches: &[GroupBatch],
    cfg: &SurrogateConfig,
) -> Result<GradientTable> {
    let mut grad: GradientTable = vec![[0.0; ACTION_COUNT]; params.logits.len()];
    let tokens = for_each_token(params, snapshot, batches, |bucket, action, ratio, advantage, probs| {
        let unclipped = ratio * advantage;
        let clipped = ratio.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high) * advantage;
        if unclipped <= clipped {
            let coef = advantage * ratio;
            let row = &mut grad[bucket];
            for (j, p) in probs.iter().enumerate() {
                row[j] -= coef * p;
            }
            row[action] += coef;
        }
    })?;
    if tokens == 0 {
        return Err(Error::Empty { context: "surrogate gradient over zero tokens" });
    }
    let scale = 1.0 / tokens as f64;
    for row in &mut grad {
        for g in row {
            *g *= scale;
        }
    }
    Ok(grad)
}

/// One gradient ascent step. Returns new parameters with the version
/// incremented; rejects non-finite gradients.
pub fn sgd_step(
    params: &PolicyParams,
    gradient: &GradientTable,
    cfg: &SurrogateConfig,
) -> Result<PolicyParams> {
    if gradient.len() != params.logits.len() {
        return Err(Error::InvalidConfig(format!(
            "gradient has {} rows for a table with {} buckets",
            gradient.len(),
            params.logits.len()
        )));
    }
    let mut next = params.clone();
    for (row, grad_row) in next.logits.iter_mut().zip(gradient) {
        for (logit, &g) in row.iter_mut().zip(grad_row) {
            if !g.is_finite() {
                return Err(Error::NonFinite { what: "policy gradient entry".into() });
            }
            *logit += cfg.learning_rate * g;
        }
    }
    next.version += 1;
    Ok(next)
}
