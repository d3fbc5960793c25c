//! Group-relative policy optimization with a masked, clipped surrogate.
//!
//! For a group of `G` rollouts on one image the maximized objective is
//!
//! ```text
//! J = 1/G sum_i 1/|O_i| sum_{t in O_i} m_it * min(r_it A_i, clip(r_it, 1-eps, 1+eps) A_i)
//!     - beta * mean_{visited states} KL(pi_theta || pi_ref)
//! ```
//!
//! where `O_i` are the generated (non-observation) positions of rollout `i`,
//! `r_it` the importance ratio against the rollout-time policy and `m_it` the
//! evidence-filtering mask.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::egf::{build_mask, dependency_scores, select_pivotal, EgfConfig, PivotalMask};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::pcr::{pairwise_rank_bonus, squared_error, total_reward, RewardConfig};
use crate::policy::{accumulate_logit_grad, kl_from_log_probs, kl_logit_grad, Checkpoint, PolicyParams, NUM_PARAMS};
use crate::rng;
use crate::synthenv::{generate_with, true_score_with, EnvConfig, SynthImage, MAX_PATCHES};
use crate::trajectory::{generated_indices, rollout, Role, Trajectory, DEFAULT_MAX_LEN, VOCAB_SIZE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub clip_eps: f64,
    pub beta_kl: f64,
    pub lr: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub group_size: usize,
    pub reward: RewardConfig,
    pub egf_enabled: bool,
    pub k_pct: f64,
    pub egf: EgfConfig,
    /// Divide each rollout's surrogate by its masked-token count instead of
    /// its generated-token count.
    pub normalize_by_masked: bool,
    pub max_len: usize,
    pub min_patches: usize,
    pub max_patches: usize,
    /// Reserved for a tanh hidden layer; only 0 (linear policy) is supported.
    pub hidden_units: usize,
    /// Held-out images evaluated before and after training.
    pub eval_images: usize,
    pub env: EnvConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            beta_kl: 1e-3,
            lr: 1e-2,
            epochs: 10,
            steps_per_epoch: 200,
            group_size: 8,
            reward: RewardConfig::default(),
            egf_enabled: true,
            k_pct: 0.4,
            egf: EgfConfig::default(),
            normalize_by_masked: false,
            max_len: DEFAULT_MAX_LEN,
            min_patches: 0,
            max_patches: 3,
            hidden_units: 0,
            eval_images: 200,
            env: EnvConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    // negated comparisons so that NaN fails validation
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.beta_kl >= 0.0) {
            return bad("beta_kl must be non-negative");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.k_pct > 0.0 && self.k_pct <= 1.0) {
            return bad("k_pct must lie in (0, 1]");
        }
        if self.max_len < 2 {
            return bad("max_len must be at least 2");
        }
        if self.min_patches > self.max_patches || self.max_patches > MAX_PATCHES {
            return bad("patch range must satisfy min_patches <= max_patches <= 4");
        }
        if self.hidden_units != 0 {
            return bad("hidden_units: only the linear policy (0) is supported");
        }
        self.reward.validate()
    }

    /// Reward settings with the schedule stretched over this run's steps.
    pub fn effective_reward(&self) -> RewardConfig {
        let mut r = self.reward.clone();
        if self.total_steps() > 0 {
            r.schedule.total_steps = self.total_steps();
        }
        r
    }
}

/// One image, its `G` rollouts and everything the update needs.
#[derive(Clone, Debug)]
pub struct GroupBatch {
    pub image: SynthImage,
    pub y: f64,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub masks: Vec<PivotalMask>,
}

/// `(R_i - mean) / (std + 1e-8)` with population std; all zeros when the
/// rewards are identical.
pub fn advantages(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / n;
    if rewards.iter().all(|&r| r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    rewards.iter().map(|r| (r - mean) / (std + 1e-8)).collect()
}

pub fn importance_ratio(policy: &PolicyParams, traj: &Trajectory, position: usize) -> Result<f64> {
    let tok = traj.tokens.get(position).ok_or(Error::Dimension {
        expected: traj.len(),
        got: position,
    })?;
    let old = match (tok.role, tok.logprob_old) {
        (Role::Observation, _) | (_, None) => return Err(Error::ObservationPosition(position)),
        (_, Some(lp)) => lp,
    };
    Ok((policy.logprob(&tok.features, tok.action_id)? - old).exp())
}

fn surrogate_denominator(traj: &Trajectory, mask: &PivotalMask, by_masked: bool) -> usize {
    if by_masked {
        mask.count()
    } else {
        generated_indices(traj).len()
    }
}

/// Value and gradient of the objective at `policy`.
pub fn objective_and_gradient(
    policy: &PolicyParams,
    reference: &PolicyParams,
    batch: &GroupBatch,
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let g = batch.trajectories.len() as f64;
    let eps = config.clip_eps;
    let total_generated: usize = batch.trajectories.iter().map(|t| generated_indices(t).len()).sum();
    let mut grad = vec![0.0; NUM_PARAMS];
    let mut surrogate = 0.0;
    let mut kl_sum = 0.0;
    for ((traj, mask), &adv) in batch.trajectories.iter().zip(&batch.masks).zip(&batch.advantages) {
        let denom = surrogate_denominator(traj, mask, config.normalize_by_masked);
        let scale = if denom > 0 { 1.0 / (g * denom as f64) } else { 0.0 };
        for (pos, tok) in traj.tokens.iter().enumerate() {
            if tok.role == Role::Observation {
                continue;
            }
            let lp = policy.log_probs(&tok.features)?;
            let mut dz = [0.0; VOCAB_SIZE];
            if mask.mask[pos] && scale > 0.0 {
                let old = tok.logprob_old.ok_or(Error::ObservationPosition(pos))?;
                let r = (lp[tok.action_id] - old).exp();
                let unclipped = r * adv;
                let clipped = r.clamp(1.0 - eps, 1.0 + eps) * adv;
                surrogate += scale * unclipped.min(clipped);
                if unclipped <= clipped {
                    // d(r A)/dz = r A (onehot(a) - p)
                    let c = scale * r * adv;
                    for (a, d) in dz.iter_mut().enumerate() {
                        *d = c * (f64::from(a == tok.action_id) - lp[a].exp());
                    }
                }
            }
            let lq = reference.log_probs(&tok.features)?;
            kl_sum += kl_from_log_probs(&lp, &lq);
            if config.beta_kl > 0.0 {
                let c = config.beta_kl / total_generated as f64;
                for (d, k) in dz.iter_mut().zip(kl_logit_grad(&lp, &lq)) {
                    *d -= c * k;
                }
            }
            accumulate_logit_grad(&mut grad, &tok.features, &dz, 1.0);
        }
    }
    let kl_mean = if total_generated > 0 {
        kl_sum / total_generated as f64
    } else {
        0.0
    };
    Ok((surrogate - config.beta_kl * kl_mean, grad))
}

pub fn objective(policy: &PolicyParams, reference: &PolicyParams, batch: &GroupBatch, config: &TrainConfig) -> Result<f64> {
    Ok(objective_and_gradient(policy, reference, batch, config)?.0)
}

pub fn gradient(policy: &PolicyParams, reference: &PolicyParams, batch: &GroupBatch, config: &TrainConfig) -> Result<Vec<f64>> {
    Ok(objective_and_gradient(policy, reference, batch, config)?.1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }
}

/// Bias-corrected Adam ascent step: the gradient is added.
pub fn adam_step(params: &PolicyParams, grad: &[f64], state: &AdamState, lr: f64) -> Result<(PolicyParams, AdamState)> {
    if grad.len() != params.flat().len() || state.m.len() != grad.len() {
        return Err(Error::Dimension {
            expected: params.flat().len(),
            got: grad.len(),
        });
    }
    let mut next = state.clone();
    next.t += 1;
    let bc1 = 1.0 - AdamState::BETA1.powi(next.t as i32);
    let bc2 = 1.0 - AdamState::BETA2.powi(next.t as i32);
    let mut flat = params.flat().to_vec();
    for i in 0..flat.len() {
        next.m[i] = AdamState::BETA1 * next.m[i] + (1.0 - AdamState::BETA1) * grad[i];
        next.v[i] = AdamState::BETA2 * next.v[i] + (1.0 - AdamState::BETA2) * grad[i] * grad[i];
        let m_hat = next.m[i] / bc1;
        let v_hat = next.v[i] / bc2;
        flat[i] += lr * m_hat / (v_hat.sqrt() + AdamState::EPS);
    }
    Ok((PolicyParams::from_flat(flat)?, next))
}

/// Training image for `step`: patch count uniform in `[min, max]`.
pub fn training_image(config: &TrainConfig, root: u64, step: usize) -> SynthImage {
    let mut r = rng::stream(root, "env-count", step as u64);
    let n = r.gen_range(config.min_patches..=config.max_patches);
    generate_with(&config.env, rng::derive_seed(root, "env", step as u64), n)
}

/// Held-out images drawn from the training distribution on a separate stream.
pub fn heldout_images(config: &TrainConfig, root: u64, count: usize) -> Vec<SynthImage> {
    (0..count)
        .map(|i| {
            let mut r = rng::stream(root, "heldout-count", i as u64);
            let n = r.gen_range(config.min_patches..=config.max_patches);
            generate_with(&config.env, rng::derive_seed(root, "heldout", i as u64), n)
        })
        .collect()
}

/// Held-out images with at least one distortion.
pub fn distorted_images(config: &TrainConfig, root: u64, count: usize) -> Vec<SynthImage> {
    let lo = config.min_patches.max(1);
    let hi = config.max_patches.max(lo);
    (0..count)
        .map(|i| {
            let mut r = rng::stream(root, "distorted-count", i as u64);
            let n = r.gen_range(lo..=hi);
            generate_with(&config.env, rng::derive_seed(root, "distorted", i as u64), n)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub k_t: f64,
    pub mean_reward: f64,
    pub mean_e: f64,
    pub frac_tool_use: f64,
    pub objective: f64,
}

pub const CURVE_HEADER: &str = "step,k_t,mean_reward,mean_e,frac_tool_use,objective";

pub fn curve_csv(curve: &[StepLog]) -> String {
    let mut s = format!("{CURVE_HEADER}\n");
    for r in curve {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.k_t, r.mean_reward, r.mean_e, r.frac_tool_use, r.objective
        ));
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainingReport {
    pub seed: u64,
    pub params: PolicyParams,
    pub curve: Vec<StepLog>,
    /// One checkpoint per completed epoch.
    pub checkpoints: Vec<Checkpoint>,
    pub untrained_eval: Option<EvalReport>,
    pub final_eval: Option<EvalReport>,
}

/// Builds the group batch for one step: rollouts, rewards, advantages, masks.
#[allow(clippy::too_many_arguments)]
pub fn collect_group(
    config: &TrainConfig,
    reward: &RewardConfig,
    params: &PolicyParams,
    image: SynthImage,
    root: u64,
    step: usize,
    rank_ref: Option<(f64, f64)>,
) -> Result<GroupBatch> {
    let g = config.group_size;
    let y = true_score_with(&config.env, &image);
    let trajectories: Vec<Trajectory> = (0..g)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(root, "rollout", (step * g + i) as u64);
            rollout(params, &image, &mut r, config.max_len)
        })
        .collect::<Result<_>>()?;
    let rewards: Vec<f64> = trajectories
        .iter()
        .map(|t| {
            let mut r = total_reward(reward, step, t, y);
            if reward.rank_weight > 0.0 {
                if let (Some((y_ref, y_hat_ref)), Some(y_hat)) = (rank_ref, t.predicted_score) {
                    r += reward.rank_weight * pairwise_rank_bonus(y, y_hat, y_ref, y_hat_ref);
                }
            }
            r
        })
        .collect();
    let adv = advantages(&rewards);
    let masks: Vec<PivotalMask> = if config.egf_enabled {
        trajectories
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                let seed = rng::derive_seed(root, "perturb", (step * g + i) as u64);
                let prof = dependency_scores(params, t, &image, seed, &config.env, &config.egf, config.max_len)?;
                Ok(build_mask(t, &select_pivotal(&prof, config.k_pct), config.egf.keep_score_token))
            })
            .collect::<Result<_>>()?
    } else {
        trajectories.iter().map(PivotalMask::all_generated).collect()
    };
    Ok(GroupBatch {
        image,
        y,
        trajectories,
        rewards,
        advantages: adv,
        masks,
    })
}

fn step_log(step: usize, k_t: f64, batch: &GroupBatch, objective: f64) -> StepLog {
    let n = batch.trajectories.len() as f64;
    let errs: Vec<f64> = batch
        .trajectories
        .iter()
        .filter_map(|t| t.predicted_score.map(|p| squared_error(batch.y, p)))
        .collect();
    StepLog {
        step,
        k_t,
        mean_reward: batch.rewards.iter().sum::<f64>() / n,
        mean_e: if errs.is_empty() {
            f64::NAN
        } else {
            errs.iter().sum::<f64>() / errs.len() as f64
        },
        frac_tool_use: batch.trajectories.iter().filter(|t| t.tool_calls > 0).count() as f64 / n,
        objective,
    }
}

/// Runs the full training loop from the uniform policy.
pub fn train(config: &TrainConfig, seed: u64) -> Result<TrainingReport> {
    config.validate()?;
    let reward = config.effective_reward();
    let total = config.total_steps();
    let mut params = PolicyParams::zeros();
    let reference = params.clone();
    let mut adam = AdamState::new(NUM_PARAMS);
    let heldout = heldout_images(config, seed, config.eval_images);
    let run_eval = |p: &PolicyParams| -> Result<Option<EvalReport>> {
        if config.eval_images >= 2 {
            evaluate(p, &heldout, &config.env, None, config.max_len).map(Some)
        } else {
            Ok(None)
        }
    };
    let untrained_eval = run_eval(&params)?;
    let mut curve = Vec::with_capacity(total);
    let mut checkpoints = Vec::new();
    let mut rank_ref: Option<(f64, f64)> = None;
    for step in 0..total {
        let image = training_image(config, seed, step);
        let batch = collect_group(config, &reward, &params, image, seed, step, rank_ref)?;
        let (obj, grad) = objective_and_gradient(&params, &reference, &batch, config)?;
        if !obj.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                detail: format!(
                    "objective={obj} rewards={:?} advantages={:?} image_seed={}",
                    batch.rewards, batch.advantages, batch.image.seed
                ),
            });
        }
        let (next, state) = adam_step(&params, &grad, &adam, config.lr)?;
        params = next;
        adam = state;
        let preds: Vec<f64> = batch.trajectories.iter().filter_map(|t| t.predicted_score).collect();
        if !preds.is_empty() {
            rank_ref = Some((batch.y, preds.iter().sum::<f64>() / preds.len() as f64));
        }
        curve.push(step_log(step, reward.k_at(step), &batch, obj));
        if config.steps_per_epoch > 0 && (step + 1) % config.steps_per_epoch == 0 {
            checkpoints.push(Checkpoint::new(&params, (step + 1) as u64, seed));
        }
    }
    let final_eval = if total > 0 { run_eval(&params)? } else { None };
    Ok(TrainingReport {
        seed,
        params,
        curve,
        checkpoints,
        untrained_eval,
        final_eval,
    })
}
