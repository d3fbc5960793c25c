//! Curriculum score reward, format reward and their weighted total.
//!
//! The score reward turns the squared prediction error `e = (y_hat - y)^2`
//! into a bounded value whose sensitivity `k(t)` grows over training along a
//! logistic schedule, so early training sees a broad reward surface and late
//! training a sharp one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{Role, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSchedule {
    pub k_min: f64,
    pub k_max: f64,
    /// Transition center as a fraction of training.
    pub tau: f64,
    pub steepness: f64,
    pub total_steps: usize,
}

impl Default for RewardSchedule {
    fn default() -> Self {
        Self {
            k_min: 5.0,
            k_max: 25.0,
            tau: 0.5,
            steepness: 10.0,
            total_steps: 2000,
        }
    }
}

impl RewardSchedule {
    // negated comparisons so that NaN fails validation
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.k_min < self.k_max) {
            return Err(Error::Config("schedule.k_min must be below schedule.k_max".into()));
        }
        if self.total_steps < 1 {
            return Err(Error::Config("schedule.total_steps must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config("schedule.tau must lie in (0, 1)".into()));
        }
        if !(self.steepness > 0.0) {
            return Err(Error::Config("schedule.steepness must be positive".into()));
        }
        Ok(())
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `k(t) = k_min + (k_max - k_min) * logistic(s * (t / T - tau))`, with `t`
/// clamped to `[0, T]`.
pub fn sharpness(schedule: &RewardSchedule, t: usize) -> f64 {
    let total = schedule.total_steps.max(1);
    let t = t.min(total) as f64;
    let x = schedule.steepness * (t / total as f64 - schedule.tau);
    schedule.k_min + (schedule.k_max - schedule.k_min) * logistic(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardShape {
    /// `2 / (1 + exp(k(t) e))`
    Sigmoid,
    /// `exp(-k(t) e) + epsilon`
    Exponential,
    /// `1` if `e <= binary_threshold`, else `0`
    Binary,
    /// `exp(-k_fixed e)`
    FixedGauss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub shape: RewardShape,
    pub epsilon: f64,
    pub lambda_fmt: f64,
    pub schedule: RewardSchedule,
    pub binary_threshold: f64,
    pub k_fixed: f64,
    /// Weight of the pairwise rank bonus (0 disables it).
    pub rank_weight: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            shape: RewardShape::Exponential,
            epsilon: 1e-4,
            lambda_fmt: 0.5,
            schedule: RewardSchedule::default(),
            binary_threshold: 0.25,
            k_fixed: 5.0,
            rank_weight: 0.0,
        }
    }
}

impl RewardConfig {
    // negated comparisons so that NaN fails validation
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("reward.epsilon must be positive".into()));
        }
        if !(self.lambda_fmt >= 0.0) {
            return Err(Error::Config("reward.lambda_fmt must be non-negative".into()));
        }
        if !(self.rank_weight >= 0.0) {
            return Err(Error::Config("reward.rank_weight must be non-negative".into()));
        }
        if matches!(self.shape, RewardShape::Sigmoid | RewardShape::Exponential) {
            self.schedule.validate()?;
        }
        Ok(())
    }

    /// Sharpness in effect at step `t` (the fixed one for static shapes).
    pub fn k_at(&self, t: usize) -> f64 {
        match self.shape {
            RewardShape::Sigmoid | RewardShape::Exponential => sharpness(&self.schedule, t),
            RewardShape::FixedGauss => self.k_fixed,
            RewardShape::Binary => f64::NAN,
        }
    }
}

pub fn squared_error(y: f64, y_hat: f64) -> f64 {
    (y_hat - y) * (y_hat - y)
}

/// Score reward for squared error `e` at sharpness `k`.
pub fn reward_for_error(config: &RewardConfig, k: f64, e: f64) -> f64 {
    match config.shape {
        RewardShape::Sigmoid => {
            let x = k * e;
            // 2 / (1 + exp(x)) without overflow for large x
            if x > 700.0 {
                2.0 * (-x).exp()
            } else {
                2.0 / (1.0 + x.exp())
            }
        }
        RewardShape::Exponential => (-k * e).exp() + config.epsilon,
        RewardShape::Binary => {
            if e <= config.binary_threshold {
                1.0
            } else {
                0.0
            }
        }
        RewardShape::FixedGauss => (-config.k_fixed * e).exp(),
    }
}

pub fn score_reward(config: &RewardConfig, t: usize, y: f64, y_hat: f64) -> f64 {
    reward_for_error(config, config.k_at(t), squared_error(y, y_hat))
}

/// `+1` for a tool-using trajectory that ends in a score, `-1` for one that
/// never emits a score, `0` otherwise.
pub fn format_reward(traj: &Trajectory) -> f64 {
    let scored = traj.tokens.last().is_some_and(|t| t.role == Role::Score);
    if !scored {
        -1.0
    } else if traj.tool_calls >= 1 {
        1.0
    } else {
        0.0
    }
}

/// `R = R_score + lambda * r_fmt`; a trajectory without a prediction gets no
/// score reward.
pub fn total_reward(config: &RewardConfig, t: usize, traj: &Trajectory, y: f64) -> f64 {
    let score = traj
        .predicted_score
        .map(|y_hat| score_reward(config, t, y, y_hat))
        .unwrap_or(0.0);
    score + config.lambda_fmt * format_reward(traj)
}

/// Pairwise ranking bonus against a reference image: 1 when the predicted
/// ordering of (this, reference) agrees with the true ordering, 0.5 on a true
/// tie, 0 otherwise. A simple stand-in for ranking rewards.
pub fn pairwise_rank_bonus(y: f64, y_hat: f64, y_ref: f64, y_hat_ref: f64) -> f64 {
    let truth = (y - y_ref).partial_cmp(&0.0);
    let pred = (y_hat - y_hat_ref).partial_cmp(&0.0);
    if y == y_ref {
        0.5
    } else if truth == pred {
        1.0
    } else {
        0.0
    }
}
