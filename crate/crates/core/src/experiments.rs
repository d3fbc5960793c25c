//! Experiment drivers shared by the command-line tool and the test suites.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::egf::{dependency_scores, DependencyHistogram};
use crate::error::{Error, Result};
use crate::grpo::{heldout_images, train, TrainConfig};
use crate::metrics::{evidence_perturb_eval, EvalReport, EvidencePerturbReport};
use crate::pcr::{reward_for_error, sharpness, RewardConfig, RewardSchedule, RewardShape};
use crate::policy::PolicyParams;
use crate::rng;
use crate::synthenv::SynthImage;
use crate::trajectory::{rollout, Role, Trajectory};

pub const REWARD_SURFACE_HEADER: &str = "t,e,R_sigmoid,R_exp,R_binary,k_t";

/// Reward of every shape over a `t x e` grid, sharing `reward`'s schedule.
pub fn reward_surface_csv(reward: &RewardConfig, ts: &[usize], es: &[f64]) -> String {
    let with = |shape| RewardConfig {
        shape,
        ..reward.clone()
    };
    let (sig, exp, bin) = (
        with(RewardShape::Sigmoid),
        with(RewardShape::Exponential),
        with(RewardShape::Binary),
    );
    let mut s = format!("{REWARD_SURFACE_HEADER}\n");
    for &t in ts {
        let k = sharpness(&reward.schedule, t);
        for &e in es {
            s.push_str(&format!(
                "{t},{e},{},{},{},{k}\n",
                reward_for_error(&sig, k, e),
                reward_for_error(&exp, k, e),
                reward_for_error(&bin, k, e),
            ));
        }
    }
    s
}

/// `points` evenly spaced steps from 0 to `T` inclusive.
pub fn t_grid(schedule: &RewardSchedule, points: usize) -> Vec<usize> {
    let total = schedule.total_steps;
    match points {
        0 => Vec::new(),
        1 => vec![0],
        n => (0..n).map(|i| (i * total + (n - 1) / 2) / (n - 1)).collect(),
    }
}

/// Dependency scores of one sampled rollout per image, split by where the
/// token sits relative to the trajectory's tool use.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DependencySample {
    pub all: Vec<f64>,
    /// Generated tokens emitted before any tool call.
    pub pre_tool: Vec<f64>,
    /// Generated tokens emitted after at least one observation.
    pub post_observation: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

impl DependencySample {
    pub fn pre_tool_mean(&self) -> f64 {
        mean(&self.pre_tool)
    }

    pub fn post_observation_mean(&self) -> f64 {
        mean(&self.post_observation)
    }
}

pub fn collect_dependencies(
    policy: &PolicyParams,
    images: &[SynthImage],
    root: u64,
    config: &TrainConfig,
) -> Result<DependencySample> {
    let per_image: Vec<(Trajectory, Vec<f64>)> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut r = rng::stream(root, "dependency-rollout", i as u64);
            let traj = rollout(policy, img, &mut r, config.max_len)?;
            let seed = rng::derive_seed(root, "dependency-perturb", i as u64);
            let prof = dependency_scores(policy, &traj, img, seed, &config.env, &config.egf, config.max_len)?;
            Ok((traj, prof.scores))
        })
        .collect::<Result<_>>()?;
    let mut out = DependencySample::default();
    for (traj, scores) in per_image {
        let mut seen_call = false;
        let mut seen_obs = false;
        let mut scores = scores.into_iter();
        for tok in traj.tokens.iter() {
            if tok.role == Role::Observation {
                seen_obs = true;
                continue;
            }
            let s = scores.next().expect("one score per generated token");
            if tok.role == Role::ToolCall {
                seen_call = true;
            }
            if !seen_call && tok.role != Role::ToolCall {
                out.pre_tool.push(s);
            }
            if seen_obs {
                out.post_observation.push(s);
            }
            out.all.push(s);
        }
    }
    Ok(out)
}

/// Histogram of token dependency scores over one rollout per image.
pub fn dependency_histogram(
    policy: &PolicyParams,
    images: &[SynthImage],
    root: u64,
    config: &TrainConfig,
    num_bins: usize,
    max: f64,
    threshold: f64,
) -> Result<DependencyHistogram> {
    let sample = collect_dependencies(policy, images, root, config)?;
    Ok(DependencyHistogram::build(&sample.all, num_bins, max, threshold))
}

/// One arm of the reward-shape x filtering grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub name: String,
    pub shape: RewardShape,
    pub egf: bool,
    pub rank_weight: f64,
}

impl AblationArm {
    fn new(name: &str, shape: RewardShape, egf: bool, rank_weight: f64) -> Self {
        Self {
            name: name.to_string(),
            shape,
            egf,
            rank_weight,
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.reward.shape = self.shape;
        cfg.reward.rank_weight = self.rank_weight;
        cfg.egf_enabled = self.egf;
        cfg
    }
}

pub const RANK_WEIGHT: f64 = 0.5;

pub fn ablation_arms() -> Vec<AblationArm> {
    vec![
        AblationArm::new("binary", RewardShape::Binary, false, 0.0),
        AblationArm::new("egf_binary", RewardShape::Binary, true, 0.0),
        AblationArm::new("egf_gauss", RewardShape::FixedGauss, true, 0.0),
        AblationArm::new("egf_gauss_rank", RewardShape::FixedGauss, true, RANK_WEIGHT),
        AblationArm::new("pcr", RewardShape::Exponential, false, 0.0),
        AblationArm::new("egf_pcr", RewardShape::Exponential, true, 0.0),
    ]
}

pub fn find_arm(name: &str) -> Result<AblationArm> {
    ablation_arms()
        .into_iter()
        .find(|a| a.name == name)
        .ok_or_else(|| Error::Config(format!("unknown ablation arm {name:?}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub seed: u64,
    pub plcc: f64,
    pub srcc: f64,
    pub acc_loc: f64,
}

pub fn run_arm(base: &TrainConfig, arm: &AblationArm, seed: u64) -> Result<AblationRow> {
    let cfg = arm.apply(base);
    let report = train(&cfg, seed)?;
    let eval = report
        .final_eval
        .ok_or_else(|| Error::Config("ablation needs eval_images >= 2 and at least one step".into()))?;
    Ok(AblationRow {
        arm: arm.name.clone(),
        seed,
        plcc: eval.plcc,
        srcc: eval.srcc,
        acc_loc: eval.acc_loc,
    })
}

pub fn run_ablation(base: &TrainConfig, arms: &[AblationArm], seeds: &[u64]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(arms.len() * seeds.len());
    for arm in arms {
        for &seed in seeds {
            rows.push(run_arm(base, arm, seed)?);
        }
    }
    Ok(rows)
}

/// Mean SRCC of `arm` over its rows.
pub fn arm_mean_srcc(rows: &[AblationRow], arm: &str) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| r.arm == arm).map(|r| r.srcc).collect();
    mean(&v)
}

pub const ABLATION_HEADER: &str = "arm,shape,egf,seed,plcc,srcc,acc_loc";

/// Per-seed rows followed by one `mean` row per arm, arms in `arms` order.
pub fn ablation_csv(arms: &[AblationArm], rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    let shape_name = |a: &AblationArm| serde_json::to_value(a.shape).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    for arm in arms {
        let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.arm == arm.name).collect();
        if mine.is_empty() {
            continue;
        }
        for r in &mine {
            s.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6}\n",
                arm.name,
                shape_name(arm),
                arm.egf,
                r.seed,
                r.plcc,
                r.srcc,
                r.acc_loc
            ));
        }
        let m = |f: fn(&AblationRow) -> f64| mean(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
        s.push_str(&format!(
            "{},{},{},mean,{:.6},{:.6},{:.6}\n",
            arm.name,
            shape_name(arm),
            arm.egf,
            m(|r| r.plcc),
            m(|r| r.srcc),
            m(|r| r.acc_loc)
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbComparison {
    pub clean_srcc: f64,
    pub perturbed_srcc: f64,
    pub clean_plcc: f64,
    pub perturbed_plcc: f64,
    pub srcc_drop: f64,
}

/// The JSON document written by the `eval` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub plcc: f64,
    pub srcc: f64,
    pub acc_loc: f64,
    pub n: usize,
    pub malformed: usize,
    pub clean_vs_perturbed: Option<PerturbComparison>,
}

impl EvalSummary {
    pub fn from_reports(clean: &EvalReport, perturbed: Option<&EvidencePerturbReport>) -> Self {
        Self {
            plcc: clean.plcc,
            srcc: clean.srcc,
            acc_loc: clean.acc_loc,
            n: clean.n,
            malformed: clean.malformed,
            clean_vs_perturbed: perturbed.map(|p| PerturbComparison {
                clean_srcc: p.clean.srcc,
                perturbed_srcc: p.perturbed.srcc,
                clean_plcc: p.clean.plcc,
                perturbed_plcc: p.perturbed.plcc,
                srcc_drop: p.srcc_drop(),
            }),
        }
    }
}

/// Greedy evaluation on fresh held-out images, optionally repeated with
/// perturbed crops.
pub fn evaluate_checkpoint(
    policy: &PolicyParams,
    config: &TrainConfig,
    root: u64,
    n_images: usize,
    with_perturb: bool,
) -> Result<(EvalReport, Option<EvidencePerturbReport>)> {
    let images = heldout_images(config, root, n_images);
    if with_perturb {
        let ep = evidence_perturb_eval(policy, &images, root, &config.env, &config.egf.perturb, config.max_len)?;
        Ok((ep.clean.clone(), Some(ep)))
    } else {
        let r = crate::metrics::evaluate(policy, &images, &config.env, None, config.max_len)?;
        Ok((r, None))
    }
}
