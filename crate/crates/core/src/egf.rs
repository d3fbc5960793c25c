//! Gradient filtering by visual dependency.
//!
//! Each generated token is scored by how much its next-token distribution
//! moves when the image is swapped for a distortion-perturbed copy; only the
//! most image-dependent tokens keep their policy-gradient weight.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::policy::{kl_from_log_probs, PolicyParams};
use crate::synthenv::{perturb_with, EnvConfig, PerturbConfig, SynthImage};
use crate::trajectory::{generated_indices, replay_features, Role, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EgfConfig {
    /// Always keep the terminal score token in the mask.
    pub keep_score_token: bool,
    /// Number of perturbed images averaged per trajectory.
    pub perturb_samples: usize,
    pub perturb: PerturbConfig,
}

impl Default for EgfConfig {
    fn default() -> Self {
        Self {
            keep_score_token: true,
            perturb_samples: 1,
            perturb: PerturbConfig::default(),
        }
    }
}

/// Dependency score per generated position.
#[derive(Clone, Debug, PartialEq)]
pub struct DependencyProfile {
    pub positions: Vec<usize>,
    pub scores: Vec<f64>,
}

impl DependencyProfile {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// KL between next-token distributions at every generated position under
/// the true image and under `perturbed` (same actions replayed, crops taken
/// from the respective image).
pub fn dependency_scores_against(
    policy: &PolicyParams,
    traj: &Trajectory,
    img: &SynthImage,
    perturbed: &SynthImage,
    max_len: usize,
) -> Result<DependencyProfile> {
    let clean = replay_features(traj, img, img, max_len)?;
    let pert = replay_features(traj, perturbed, perturbed, max_len)?;
    let mut scores = Vec::with_capacity(clean.len());
    for (a, b) in clean.iter().zip(&pert) {
        scores.push(kl_from_log_probs(&policy.log_probs(a)?, &policy.log_probs(b)?));
    }
    Ok(DependencyProfile {
        positions: generated_indices(traj),
        scores,
    })
}

/// Dependency profile averaged over `cfg.perturb_samples` perturbations
/// seeded from `perturb_seed`.
pub fn dependency_scores(
    policy: &PolicyParams,
    traj: &Trajectory,
    img: &SynthImage,
    perturb_seed: u64,
    env: &EnvConfig,
    cfg: &EgfConfig,
    max_len: usize,
) -> Result<DependencyProfile> {
    let m = cfg.perturb_samples.max(1);
    let mut acc: Option<DependencyProfile> = None;
    for j in 0..m {
        let seed = if j == 0 {
            perturb_seed
        } else {
            crate::rng::mix64(perturb_seed ^ j as u64)
        };
        let pert = perturb_with(env, &cfg.perturb, img, seed);
        let prof = dependency_scores_against(policy, traj, img, &pert, max_len)?;
        match acc.as_mut() {
            None => acc = Some(prof),
            Some(a) => {
                for (x, y) in a.scores.iter_mut().zip(prof.scores) {
                    *x += y;
                }
            }
        }
    }
    let mut prof = acc.expect("at least one sample");
    if m > 1 {
        for s in &mut prof.scores {
            *s /= m as f64;
        }
    }
    Ok(prof)
}

/// Trajectory positions of the `ceil(k_pct * n)` highest-scoring tokens,
/// ties broken toward earlier positions. Returned in position order.
pub fn select_pivotal(profile: &DependencyProfile, k_pct: f64) -> Vec<usize> {
    let n = profile.len();
    if n == 0 {
        return Vec::new();
    }
    let k = ((k_pct.clamp(0.0, 1.0) * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        profile.scores[b]
            .total_cmp(&profile.scores[a])
            .then(a.cmp(&b))
    });
    let mut picked: Vec<usize> = order[..k].iter().map(|&i| profile.positions[i]).collect();
    picked.sort_unstable();
    picked
}

/// Per-position gradient weights `m_{i,t}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PivotalMask {
    pub mask: Vec<bool>,
}

impl PivotalMask {
    /// Every generated position set (filtering disabled).
    pub fn all_generated(traj: &Trajectory) -> Self {
        Self {
            mask: traj.tokens.iter().map(|t| t.loss_mask).collect(),
        }
    }

    pub fn zeros(traj: &Trajectory) -> Self {
        Self {
            mask: vec![false; traj.len()],
        }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// 1 at `pivotal` (plus the terminal score token when `keep_score_token`),
/// 0 elsewhere; observation positions are always 0.
pub fn build_mask(traj: &Trajectory, pivotal: &[usize], keep_score_token: bool) -> PivotalMask {
    let mut mask = vec![false; traj.len()];
    for &p in pivotal {
        if p < mask.len() {
            mask[p] = true;
        }
    }
    if keep_score_token {
        if let Some(last) = traj.tokens.last() {
            if last.role == Role::Score {
                mask[traj.len() - 1] = true;
            }
        }
    }
    for (m, t) in mask.iter_mut().zip(&traj.tokens) {
        if t.role == Role::Observation {
            *m = false;
        }
    }
    PivotalMask { mask }
}

/// Fraction of tokens per histogram bin of dependency scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependencyHistogram {
    /// Lower edge of each bin; the last bin is open-ended.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
    pub threshold: f64,
    pub above_threshold: usize,
}

impl DependencyHistogram {
    /// Bins `[0, 0]` (exact zeros), then `(edges[i], edges[i+1]]` with
    /// uniform width up to `max`, plus an overflow bin.
    pub fn build(scores: &[f64], num_bins: usize, max: f64, threshold: f64) -> Self {
        let num_bins = num_bins.max(1);
        let width = max / num_bins as f64;
        let mut edges = vec![0.0];
        edges.extend((0..=num_bins).map(|i| i as f64 * width));
        let mut counts = vec![0usize; edges.len()];
        for &s in scores {
            let bin = if s <= 0.0 {
                0
            } else {
                let i = (s / width).ceil() as usize;
                i.clamp(1, num_bins + 1)
            };
            counts[bin] += 1;
        }
        Self {
            edges,
            counts,
            total: scores.len(),
            threshold,
            above_threshold: scores.iter().filter(|&&s| s >= threshold).count(),
        }
    }

    pub fn fraction_above(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.above_threshold as f64 / self.total as f64
        }
    }

    /// CSV with header `score_bin,count,fraction`; `score_bin` is the lower
    /// edge (`0` for the exact-zero bin, `>max` for overflow).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("score_bin,count,fraction\n");
        let n = self.total.max(1) as f64;
        for (i, c) in self.counts.iter().enumerate() {
            let label = if i == 0 {
                "0".to_string()
            } else if i == self.counts.len() - 1 {
                format!(">{:.6}", self.edges[i])
            } else {
                format!("{:.6}", self.edges[i])
            };
            s.push_str(&format!("{},{},{:.6}\n", label, c, *c as f64 / n));
        }
        s
    }
}
