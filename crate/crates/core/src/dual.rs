//! The adaptive penalty-coefficient controller.
//!
//! The coefficient `lambda` scales the length penalty inside reward shaping.
//! After each policy update the controller estimates the batch constraint
//! violation (mean relative length excess) and moves `lambda` by one clipped
//! ascent step in that direction: violations above zero tighten the penalty,
//! violations below zero relax it. A constant controller is provided as the
//! fixed-penalty baseline.

use serde::{Deserialize, Serialize};

use crate::{shaping, Error, Result};

/// The penalty coefficient together with its admissible range and step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    /// Current penalty coefficient.
    pub lambda: f64,
    /// Lower clamp for `lambda`.
    pub lambda_min: f64,
    /// Upper clamp for `lambda`.
    pub lambda_max: f64,
    /// Ascent step size.
    pub step_size: f64,
}

impl Default for DualState {
    fn default() -> Self {
        DualState { lambda: 0.1, lambda_min: 0.0, lambda_max: 1.0, step_size: 0.005 }
    }
}

impl DualState {
    pub fn new(lambda: f64, lambda_min: f64, lambda_max: f64, step_size: f64) -> Result<Self> {
        let state = DualState { lambda, lambda_min, lambda_max, step_size };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 <= self.lambda_min
            && self.lambda_min <= self.lambda
            && self.lambda <= self.lambda_max;
        if !ordered {
            return Err(Error::InvalidConfig(format!(
                "require 0 <= lambda_min <= lambda <= lambda_max, got min={} lambda={} max={}",
                self.lambda_min, self.lambda, self.lambda_max
            )));
        }
        if !self.step_size.is_finite() || self.step_size <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "dual step size must be positive and finite, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// A batch estimate of the constraint violation: the mean relative length
/// excess over every sampled response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViolationEstimate {
    /// Mean of `length / target - 1` over the batch.
    pub value: f64,
    /// Number of responses averaged.
    pub sample_count: usize,
}

/// Average the per-sample violation over a batch of lengths.
pub fn estimate_violation(lengths: &[usize], target: usize) -> Result<ViolationEstimate> {
    if lengths.is_empty() {
        return Err(Error::Empty { context: "violation estimate over zero lengths" });
    }
    let mut sum = 0.0;
    for &len in lengths {
        sum += shaping::violation(len, target)?;
    }
    Ok(ViolationEstimate { value: sum / lengths.len() as f64, sample_count: lengths.len() })
}

/// One clipped dual-ascent step: raise `lambda` in proportion to the measured
/// violation and clamp into the configured range. The input state is not
/// mutated.
pub fn dual_update(state: &DualState, violation: &ViolationEstimate) -> DualState {
    let lambda = (state.lambda + state.step_size * violation.value)
        .clamp(state.lambda_min, state.lambda_max);
    DualState { lambda, ..state.clone() }
}

/// Fixed-penalty baseline: the coefficient never moves.
pub fn constant_controller(state: &DualState, _violation: &ViolationEstimate) -> DualState {
    state.clone()
}

/// Which controller the trainer applies after each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Clipped dual ascent on the violation estimate.
    Adaptive,
    /// Fixed coefficient.
    Constant,
}

impl ControllerKind {
    pub fn apply(self, state: &DualState, violation: &ViolationEstimate) -> DualState {
        match self {
            ControllerKind::Adaptive => dual_update(state, violation),
            ControllerKind::Constant => constant_controller(state, violation),
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ControllerKind::Adaptive => "adaptive",
            ControllerKind::Constant => "constant",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn estimate(value: f64) -> ViolationEstimate {
        ViolationEstimate { value, sample_count: 1 }
    }

    #[test]
    fn estimate_violation_averages_relative_excess() {
        let e = estimate_violation(&[4000, 4000], 4000).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.sample_count, 2);

        assert_eq!(estimate_violation(&[3000, 5000], 4000).unwrap().value, 0.0);
        assert_eq!(estimate_violation(&[6000, 6000, 2000, 2000], 4000).unwrap().value, 0.0);
        assert_eq!(estimate_violation(&[8000], 4000).unwrap().value, 1.0);

        assert!(matches!(estimate_violation(&[], 4000), Err(Error::Empty { .. })));
        assert!(matches!(estimate_violation(&[1], 0), Err(Error::ZeroTarget)));
    }

    #[test]
    fn dual_update_moves_by_scaled_violation() {
        let state = DualState::default();
        let next = dual_update(&state, &estimate(0.5));
        assert!((next.lambda - 0.1025).abs() < 1e-15);
        // Untouched fields carry over and the input state is intact.
        assert_eq!(next.lambda_min, state.lambda_min);
        assert_eq!(next.lambda_max, state.lambda_max);
        assert_eq!(next.step_size, state.step_size);
        assert_eq!(state.lambda, 0.1);
    }

    #[test]
    fn dual_update_clamps_at_bounds() {
        let at_floor = DualState::new(0.0, 0.0, 1.0, 0.005).unwrap();
        assert_eq!(dual_update(&at_floor, &estimate(-1.0)).lambda, 0.0);

        let near_ceiling = DualState::new(0.98, 0.0, 1.0, 0.05).unwrap();
        assert_eq!(dual_update(&near_ceiling, &estimate(1.0)).lambda, 1.0);
    }

    #[test]
    fn constant_controller_is_a_no_op() {
        let state = DualState::new(0.1, 0.0, 1.0, 0.005).unwrap();
        assert_eq!(constant_controller(&state, &estimate(5.0)), state);

        let other = DualState::new(0.2, 0.0, 1.0, 0.005).unwrap();
        assert_eq!(constant_controller(&other, &estimate(5.0)).lambda, 0.2);
    }

    #[test]
    fn controllers_differ_exactly_when_violation_moves_an_interior_lambda() {
        let state = DualState::new(0.5, 0.0, 1.0, 0.01).unwrap();
        for value in [-1.0, -0.1, 0.0, 0.1, 1.0] {
            let v = estimate(value);
            let adaptive = ControllerKind::Adaptive.apply(&state, &v);
            let constant = ControllerKind::Constant.apply(&state, &v);
            if value == 0.0 {
                assert_eq!(adaptive, constant);
            } else {
                assert_ne!(adaptive.lambda, constant.lambda);
            }
        }
    }

    #[test]
    fn state_validation_rejects_inverted_bounds() {
        assert!(DualState::new(0.5, 0.6, 1.0, 0.01).is_err());
        assert!(DualState::new(1.5, 0.0, 1.0, 0.01).is_err());
        assert!(DualState::new(0.5, 0.0, 1.0, 0.0).is_err());
    }

    proptest! {
        // Any sequence of updates keeps lambda inside its range.
        #[test]
        fn lambda_stays_within_bounds(
            violations in prop::collection::vec(-5.0f64..=5.0, 0..64),
            init in 0.0f64..=1.0, step in 1e-4f64..=0.5,
        ) {
            let mut state = DualState::new(init, 0.0, 1.0, step).unwrap();
            for v in violations {
                state = dual_update(&state, &estimate(v));
                prop_assert!(state.lambda >= state.lambda_min);
                prop_assert!(state.lambda <= state.lambda_max);
            }
        }

        // Strictly interior lambda moves strictly in the violation's direction
        // and stays put exactly at zero violation.
        #[test]
        fn sign_law_and_fixed_point(
            lambda in 0.05f64..=0.95, value in -2.0f64..=2.0, step in 1e-4f64..=0.01,
        ) {
            let state = DualState::new(lambda, 0.0, 1.0, step).unwrap();
            let next = dual_update(&state, &estimate(value));
            if value > 0.0 {
                prop_assert!(next.lambda > state.lambda);
            } else if value < 0.0 {
                prop_assert!(next.lambda < state.lambda);
            } else {
                prop_assert_eq!(next.lambda, state.lambda);
            }
        }

        // The estimate is permutation invariant, and scaling every length by
        // two at target T matches the original lengths at target T/2 exactly
        // (the per-sample quotients are bit-identical); it also equals twice
        // the original estimate plus one up to rounding.
        #[test]
        fn estimate_identities(
            mut lengths in prop::collection::vec(0usize..=10_000, 1..32),
            half_target in 1usize..=500, swap in any::<(prop::sample::Index, prop::sample::Index)>(),
        ) {
            let target = half_target * 2;
            let base = estimate_violation(&lengths, target).unwrap();

            let i = swap.0.index(lengths.len());
            let j = swap.1.index(lengths.len());
            lengths.swap(i, j);
            let permuted = estimate_violation(&lengths, target).unwrap();
            // Identical up to summation order.
            prop_assert!(
                (base.value - permuted.value).abs() <= 1e-12 * base.value.abs().max(1.0)
            );

            let doubled: Vec<usize> = lengths.iter().map(|&l| l * 2).collect();
            let doubled_at_target = estimate_violation(&doubled, target).unwrap();
            let original_at_half = estimate_violation(&lengths, half_target).unwrap();
            prop_assert_eq!(doubled_at_target.value, original_at_half.value);
            let affine = 2.0 * base.value + 1.0;
            prop_assert!(
                (doubled_at_target.value - affine).abs() <= 1e-12 * affine.abs().max(1.0)
            );
        }
    }
}
