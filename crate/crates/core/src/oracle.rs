//! Exact ground truth for small instances.
//!
//! Because an episode's reward depends only on its length, the expectation
//! over all trajectories factors: enumerate the length distribution induced
//! by the per-state stop probabilities and marginalize the choice among the
//! four think variants analytically. This makes exact expected rewards,
//! lengths, and violations linear in the episode cap, while the reported
//! trajectory count still refers to the full action-sequence tree.
//!
//! Also provides central finite-difference gradients for checking the
//! analytic surrogate gradient, and the complementary-slackness diagnostic.

use crate::envsim::{StatePolicy, TaskSpec, TaskSet, STOP_INDEX};
use crate::policy::{GradientTable, PolicyParams};
use crate::shaping::{self, ShapingParams};
use crate::{Error, Result};

/// Caps above this refuse exact enumeration; the trajectory count stops
/// fitting comfortably and verification instances should stay small anyway.
pub const ENUMERATION_MAX_LENGTH: usize = 20;

/// Exact expectations of one (policy, task) pair under a fixed penalty
/// coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactExpectations {
    /// Expected binary task reward.
    pub expected_task_reward: f64,
    /// Expected relative length excess.
    pub expected_violation: f64,
    pub expected_length: f64,
    /// Expected one-sided clipped shaped reward.
    pub expected_shaped_reward: f64,
    /// Number of positive-probability action sequences.
    pub trajectory_count: u64,
}

/// Aggregate exact expectations over a weighted task set.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSetExpectations {
    pub expected_task_reward: f64,
    pub expected_violation: f64,
    pub expected_length: f64,
    pub expected_shaped_reward: f64,
}

/// Probability of each episode length under `policy` on `task`.
///
/// Entry `l - 1` is the probability of terminating with length `l`; the last
/// entry includes both a natural stop at the cap and the forced cutoff.
fn length_distribution(policy: &impl StatePolicy, task: &TaskSpec) -> Result<Vec<f64>> {
    let cap = task.max_length;
    let mut dist = vec![0.0; cap];
    let mut survive = 1.0; // probability no stop has occurred yet
    for (state, slot) in dist.iter_mut().enumerate() {
        let probs = policy.action_probs(state)?;
        let q = probs[STOP_INDEX];
        *slot = survive * q;
        survive *= 1.0 - q;
    }
    // Forced cutoff mass joins the natural stop at the cap.
    dist[cap - 1] += survive;
    Ok(dist)
}

/// Exact expectations by enumerating the length distribution, refusing caps
/// beyond [`ENUMERATION_MAX_LENGTH`].
pub fn enumerate_exact(
    policy: &impl StatePolicy,
    task: &TaskSpec,
    lambda: f64,
    params: &ShapingParams,
) -> Result<ExactExpectations> {
    if task.max_length > ENUMERATION_MAX_LENGTH {
        return Err(Error::EnumerationCapExceeded {
            cap: task.max_length,
            bound: ENUMERATION_MAX_LENGTH,
        });
    }
    let mut exact = expectations_unbounded(policy, task, lambda, params)?;
    exact.trajectory_count = count_positive_probability_sequences(policy, task)?;
    Ok(exact)
}

/// Exact expectations for any cap. Identical arithmetic to
/// [`enumerate_exact`] but skips the sequence count (which overflows for
/// large caps) and the cap bound; used for end-of-training diagnostics on
/// full-size tasks.
pub fn expectations_unbounded(
    policy: &impl StatePolicy,
    task: &TaskSpec,
    lambda: f64,
    params: &ShapingParams,
) -> Result<ExactExpectations> {
    let dist = length_distribution(policy, task)?;

    let mut mass = 0.0;
    let mut expected_task_reward = 0.0;
    let mut expected_violation = 0.0;
    let mut expected_length = 0.0;
    let mut expected_shaped_reward = 0.0;
    for (idx, &p) in dist.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let length = idx + 1;
        let p_success = crate::envsim::success_probability(task, length)?;
        let penalty = shaping::one_sided_penalty(length, params.target_length)?;
        let shaped_correct = shaping::shaped_reward(1.0, lambda, penalty, params).clipped;
        let shaped_wrong = shaping::shaped_reward(-1.0, lambda, penalty, params).clipped;

        mass += p;
        expected_task_reward += p * (2.0 * p_success - 1.0);
        expected_violation += p * shaping::violation(length, params.target_length)?;
        expected_length += p * length as f64;
        expected_shaped_reward += p * (p_success * shaped_correct + (1.0 - p_success) * shaped_wrong);
    }
    debug_assert!((mass - 1.0).abs() < 1e-10, "length distribution mass {mass}");

    Ok(ExactExpectations {
        expected_task_reward,
        expected_violation,
        expected_length,
        expected_shaped_reward,
        trajectory_count: 0,
    })
}

/// Count action sequences with positive probability: for each terminating
/// length, the product over prior steps of the number of think variants with
/// positive probability, plus the forced-cutoff sequences at the cap.
fn count_positive_probability_sequences(
    policy: &impl StatePolicy,
    task: &TaskSpec,
) -> Result<u64> {
    let cap = task.max_length;
    let mut count: u64 = 0;
    let mut prefix_variants: u64 = 1; // positive-probability think prefixes so far
    for state in 0..cap {
        let probs = policy.action_probs(state)?;
        if probs[STOP_INDEX] > 0.0 {
            count = count.saturating_add(prefix_variants);
        }
        let variants = probs[..STOP_INDEX].iter().filter(|&&p| p > 0.0).count() as u64;
        prefix_variants = prefix_variants.saturating_mul(variants);
        if prefix_variants == 0 {
            return Ok(count);
        }
    }
    Ok(count.saturating_add(prefix_variants))
}

/// Exact expectations over a weighted task set; all tasks share `lambda` and
/// the shaping parameters.
pub fn task_set_expectations(
    policy: &impl StatePolicy,
    tasks: &TaskSet,
    lambda: f64,
    params: &ShapingParams,
) -> Result<TaskSetExpectations> {
    let mut out = TaskSetExpectations {
        expected_task_reward: 0.0,
        expected_violation: 0.0,
        expected_length: 0.0,
        expected_shaped_reward: 0.0,
    };
    for (task, &weight) in tasks.tasks.iter().zip(&tasks.sampling_weights) {
        let e = expectations_unbounded(policy, task, lambda, params)?;
        out.expected_task_reward += weight * e.expected_task_reward;
        out.expected_violation += weight * e.expected_violation;
        out.expected_length += weight * e.expected_length;
        out.expected_shaped_reward += weight * e.expected_shaped_reward;
    }
    Ok(out)
}

/// Central finite differences of `objective` with respect to every logit.
pub fn finite_difference_gradient(
    objective: &mut dyn FnMut(&PolicyParams) -> Result<f64>,
    params: &PolicyParams,
    h: f64,
) -> Result<GradientTable> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidConfig(format!("finite-difference step must be positive, got {h}")));
    }
    let mut grad: GradientTable = vec![[0.0; 5]; params.num_buckets()];
    let mut probe = params.clone();
    for (bucket, grad_row) in grad.iter_mut().enumerate() {
        for (action, slot) in grad_row.iter_mut().enumerate() {
            let original = params.logits()[bucket][action];

            set_logit(&mut probe, bucket, action, original + h);
            let plus = objective(&probe)?;
            set_logit(&mut probe, bucket, action, original - h);
            let minus = objective(&probe)?;
            set_logit(&mut probe, bucket, action, original);

            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("objective near logit ({bucket}, {action})"),
                });
            }
            *slot = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grad)
}

fn set_logit(params: &mut PolicyParams, bucket: usize, action: usize, value: f64) {
    params.set_logit(bucket, action, value).expect("probe logit stays valid");
}

/// Complementary slackness diagnostic: at a primal-dual equilibrium either
/// the constraint is tight, the multiplier vanishes, or the multiplier sits
/// at a clamp.
pub fn slackness_check(
    lambda: f64,
    lambda_min: f64,
    lambda_max: f64,
    expected_violation: f64,
    tol: f64,
) -> bool {
    let at_bound =
        (lambda - lambda_min).abs() <= 1e-12 || (lambda - lambda_max).abs() <= 1e-12;
    at_bound || (lambda * expected_violation).abs() < tol
}
