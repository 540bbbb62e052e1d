//! The integral controller that moves one knob toward a metric goal.
//!
//! The update law is `c[k+1] = c[k] + (1 - p) / (N * alpha) * e[k+1]` where
//! `e = tracked_goal - measured`. All goals are upper bounds on the metric, so
//! a positive error means there is headroom. Hard goals track a virtual goal
//! below the real limit and switch to the aggressive pole (0) whenever the
//! measurement crosses it.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Synthesized controller parameters for one knob.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerParams<T> {
    pub alpha: T,
    pub pole: T,
    pub goal: T,
    pub virtual_goal: T,
    pub hard: bool,
    /// Number of knobs splitting the error on a super-hard goal.
    pub interaction_n: u32,
    pub conf_min: T,
    pub conf_max: T,
    /// Switch to the aggressive pole above the virtual goal. Only turned off
    /// for the single-pole baseline.
    pub context_aware: bool,
}

impl<T: Scalar> ControllerParams<T> {
    /// Soft-goal parameters: the controller tracks `goal` with a single pole.
    pub fn soft(alpha: T, pole: T, goal: T) -> Self {
        ControllerParams {
            alpha,
            pole,
            goal,
            virtual_goal: goal,
            hard: false,
            interaction_n: 1,
            conf_min: T::zero(),
            conf_max: T::max_value(),
            context_aware: true,
        }
    }

    /// Hard-goal parameters tracking `virtual_goal` (at most `goal`).
    pub fn hard(alpha: T, pole: T, goal: T, virtual_goal: T) -> Self {
        ControllerParams {
            virtual_goal,
            hard: true,
            ..Self::soft(alpha, pole, goal)
        }
    }

    pub fn with_range(mut self, conf_min: T, conf_max: T) -> Self {
        self.conf_min = conf_min;
        self.conf_max = conf_max;
        self
    }

    pub fn with_interaction(mut self, n: u32) -> Self {
        self.interaction_n = n;
        self
    }

    /// The pole used once a hard goal's virtual goal is exceeded.
    pub fn aggressive_pole(&self) -> T {
        T::zero()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.pole, self.goal, self.virtual_goal];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("controller parameters must be finite"));
        }
        if self.alpha == T::zero() {
            return Err(Error::invalid("alpha must be nonzero"));
        }
        if !(self.pole >= T::zero() && self.pole < T::one()) {
            return Err(Error::invalid(format!("pole {} outside [0, 1)", self.pole)));
        }
        if self.hard {
            if self.virtual_goal > self.goal {
                return Err(Error::invalid("virtual goal exceeds the hard goal"));
            }
        } else if self.virtual_goal != self.goal {
            return Err(Error::invalid("soft goals must track the goal itself"));
        }
        if self.interaction_n == 0 {
            return Err(Error::invalid("interaction factor must be at least 1"));
        }
        if self.conf_min.is_nan() || self.conf_max.is_nan() || self.conf_min > self.conf_max {
            return Err(Error::invalid("configuration range is empty"));
        }
        Ok(())
    }

    /// The pole in effect for a given measurement.
    pub fn effective_pole(&self, measured: T) -> T {
        if self.hard && self.context_aware && measured > self.virtual_goal {
            self.aggressive_pole()
        } else {
            self.pole
        }
    }

    /// Unclamped change in the controlled value for a tracking error.
    pub fn adjustment(&self, effective_pole: T, error: T) -> T {
        let n = T::from_u32(self.interaction_n).expect("small integer");
        (T::one() - effective_pole) / (n * self.alpha) * error
    }
}

/// Mutable controller state: the previously controlled value and step count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState<T> {
    pub last_value: T,
    pub step_index: u64,
}

impl<T: Scalar> ControllerState<T> {
    pub fn new(initial: T) -> Self {
        ControllerState {
            last_value: initial,
            step_index: 0,
        }
    }
}

/// Which end of the configuration range absorbed a step, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clamp {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step<T> {
    pub next_value: T,
    pub effective_pole: T,
    pub error: T,
    pub clamped: Option<Clamp>,
}

/// Result of profiling-based synthesis for one knob.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisReport<T> {
    pub alpha: T,
    /// Projected model-error bound, at least 1.
    pub delta: T,
    /// Mean coefficient of variation across profiled settings.
    pub lambda: T,
    pub pole: T,
    pub virtual_goal: T,
}

/// Pole from the model-error bound: `1 - 2/delta` above 2, otherwise 0.
pub fn compute_pole<T: Scalar>(delta: T) -> Result<T> {
    if !delta.is_finite() || delta < T::one() {
        return Err(Error::invalid(format!(
            "model error bound must be finite and >= 1, got {delta}"
        )));
    }
    let two = T::of(2.0);
    if delta <= two {
        return Ok(T::zero());
    }
    let p = T::one() - two / delta;
    // Huge deltas can round to exactly 1 in low precision.
    Ok(if p >= T::one() { T::one() - T::epsilon() } else { p })
}

/// Virtual goal `(1 - lambda) * goal` for hard goals; soft goals are returned
/// unchanged.
pub fn compute_virtual_goal<T: Scalar>(goal: T, lambda: T, hard: bool) -> Result<T> {
    if !goal.is_finite() || goal <= T::zero() {
        return Err(Error::invalid(format!("goal must be positive, got {goal}")));
    }
    if !lambda.is_finite() || lambda < T::zero() {
        return Err(Error::invalid(format!(
            "coefficient of variation must be >= 0, got {lambda}"
        )));
    }
    if !hard {
        return Ok(goal);
    }
    if lambda >= T::one() {
        return Err(Error::Synthesis(format!(
            "system too unstable for a virtual goal (lambda = {lambda})"
        )));
    }
    Ok((T::one() - lambda) * goal)
}

/// Advance the controller by one measurement and return the next value.
pub fn control_step<T: Scalar>(
    state: &mut ControllerState<T>,
    params: &ControllerParams<T>,
    measured: T,
) -> Step<T> {
    debug_assert!(measured.is_finite(), "measurement must be finite");
    let error = params.virtual_goal - measured;
    let effective_pole = params.effective_pole(measured);
    let raw = state.last_value + params.adjustment(effective_pole, error);
    let (next_value, clamped) = if raw < params.conf_min {
        (params.conf_min, Some(Clamp::Min))
    } else if raw > params.conf_max {
        (params.conf_max, Some(Clamp::Max))
    } else {
        (raw, None)
    };
    state.last_value = next_value;
    state.step_index += 1;
    Step {
        next_value,
        effective_pole,
        error,
        clamped,
    }
}
