//! Reward arithmetic: task reward, one-sided length penalty, augmented and
//! clipped shaped rewards, plus the two-sided ablation variant.
//!
//! All functions here are pure. The per-sample violation term is the relative
//! length excess `length / target - 1`; the one-sided penalty clamps it at
//! zero so under-budget responses are never rewarded for being short. The
//! shaped reward subtracts `lambda` times the penalty from the binary task
//! reward and clips the result into a fixed range so length outliers cannot
//! produce extreme advantages.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Parameters of the shaping stage: the length budget and the clip range
/// applied to the augmented reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapingParams {
    /// Length budget the expected generation length should satisfy.
    pub target_length: usize,
    /// Lower clip bound for the shaped reward.
    pub reward_clip_low: f64,
    /// Upper clip bound for the shaped reward.
    pub reward_clip_high: f64,
}

impl ShapingParams {
    pub fn new(target_length: usize) -> Self {
        ShapingParams { target_length, reward_clip_low: -1.0, reward_clip_high: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_length == 0 {
            return Err(Error::ZeroTarget);
        }
        if !self.reward_clip_low.is_finite()
            || !self.reward_clip_high.is_finite()
            || self.reward_clip_low >= self.reward_clip_high
        {
            return Err(Error::InvalidConfig(format!(
                "reward_clip_low ({}) must be below reward_clip_high ({})",
                self.reward_clip_low, self.reward_clip_high
            )));
        }
        Ok(())
    }
}

/// The shaped reward of a single trajectory, kept with its intermediate
/// terms so the shaping stages can be inspected and logged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapedReward {
    /// Binary task reward, +1 or -1.
    pub task_reward: f64,
    /// One-sided relative length excess, never negative.
    pub penalty: f64,
    /// `task_reward - lambda * penalty`, before clipping.
    pub augmented: f64,
    /// `augmented` clamped into the configured clip range.
    pub clipped: f64,
}

/// Binary task reward: +1 for a correct response, -1 otherwise.
pub fn task_reward(correct: bool) -> f64 {
    if correct {
        1.0
    } else {
        -1.0
    }
}

/// Relative length excess `length / target - 1`.
///
/// Negative when the response is under budget, zero at the budget, positive
/// above it.
pub fn violation(length: usize, target: usize) -> Result<f64> {
    if target == 0 {
        return Err(Error::ZeroTarget);
    }
    Ok(length as f64 / target as f64 - 1.0)
}

/// One-sided penalty `max(0, length / target - 1)`.
///
/// Responses at or under the budget incur no penalty; the term grows linearly
/// with the relative excess above it.
pub fn one_sided_penalty(length: usize, target: usize) -> Result<f64> {
    Ok(violation(length, target)?.max(0.0))
}

/// Augment a task reward with a penalty scaled by the coefficient `lambda`,
/// then clip into the configured range.
pub fn shaped_reward(
    task_reward: f64,
    lambda: f64,
    penalty: f64,
    params: &ShapingParams,
) -> ShapedReward {
    let augmented = task_reward - lambda * penalty;
    let clipped = augmented.clamp(params.reward_clip_low, params.reward_clip_high);
    ShapedReward { task_reward, penalty, augmented, clipped }
}

/// Two-sided augmented reward `r - lambda * (length / target - 1)`, unclipped.
///
/// Kept only as the ablation arm: under-budget responses receive a positive
/// bonus here, which pushes the policy toward degenerate short outputs. The
/// one-sided form above is the default.
pub fn two_sided_augmented_reward(
    task_reward: f64,
    lambda: f64,
    length: usize,
    target: usize,
) -> Result<f64> {
    Ok(task_reward - lambda * violation(length, target)?)
}

/// Two-sided augmented reward clipped into the configured range.
///
/// Separate from [`two_sided_augmented_reward`] so ablations can isolate
/// one-sidedness from clipping.
pub fn two_sided_clipped_reward(
    task_reward: f64,
    lambda: f64,
    length: usize,
    target: usize,
    params: &ShapingParams,
) -> Result<f64> {
    Ok(two_sided_augmented_reward(task_reward, lambda, length, target)?
        .clamp(params.reward_clip_low, params.reward_clip_high))
}

/// Which penalty form the trainer feeds into advantage computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// One-sided penalty, augmented reward clipped. The default.
    OneSided,
    /// Two-sided augmented reward, unclipped. Ablation arm.
    TwoSided,
    /// Two-sided augmented reward, clipped. Ablation arm.
    TwoSidedClipped,
}

impl std::fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PenaltyKind::OneSided => "one_sided",
            PenaltyKind::TwoSided => "two_sided",
            PenaltyKind::TwoSidedClipped => "two_sided_clipped",
        };
        f.write_str(s)
    }
}

/// The per-trajectory reward signal actually optimized under a given penalty
/// form. For [`PenaltyKind::OneSided`] this equals `shaped_reward(..).clipped`.
pub fn reward_signal(
    kind: PenaltyKind,
    task_reward: f64,
    lambda: f64,
    length: usize,
    params: &ShapingParams,
) -> Result<f64> {
    match kind {
        PenaltyKind::OneSided => {
            let penalty = one_sided_penalty(length, params.target_length)?;
            Ok(shaped_reward(task_reward, lambda, penalty, params).clipped)
        }
        PenaltyKind::TwoSided => {
            two_sided_augmented_reward(task_reward, lambda, length, params.target_length)
        }
        PenaltyKind::TwoSidedClipped => {
            two_sided_clipped_reward(task_reward, lambda, length, params.target_length, params)
        }
    }
}
