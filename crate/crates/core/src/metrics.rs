//! Correlation metrics, localization accuracy and greedy evaluation.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rng;
use crate::synthenv::{perturb_with, true_score_with, BBox, DistortionPatch, EnvConfig, PerturbConfig, SynthImage, IMAGE_SIZE, NUM_CELLS};
use crate::trajectory::{rollout_with, Decoder};

/// Score assigned to a rollout that never emitted a score token.
pub const FALLBACK_SCORE: f64 = 3.0;

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two samples"));
    }
    Ok(())
}

/// Pearson linear correlation.
pub fn plcc(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their rank range.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn srcc(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    plcc(&average_ranks(xs), &average_ranks(ys))
}

/// Fraction of ground-truth patch pixels covered by the union of crops.
pub fn acc_loc(crops: &[BBox], gt: &[DistortionPatch]) -> f64 {
    if crops.is_empty() {
        return 0.0;
    }
    let mut gt_px = 0usize;
    let mut covered = 0usize;
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            if gt.iter().any(|p| p.bbox.contains(x, y)) {
                gt_px += 1;
                if crops.iter().any(|c| c.contains(x, y)) {
                    covered += 1;
                }
            }
        }
    }
    if gt_px == 0 {
        0.0
    } else {
        covered as f64 / gt_px as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_seed: u64,
    pub y: f64,
    pub y_hat: Option<f64>,
    pub crops: Vec<usize>,
    pub acc_loc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub plcc: f64,
    pub srcc: f64,
    /// Mean per-image localization accuracy over images with at least one
    /// tool call and one ground-truth patch.
    pub acc_loc: f64,
    pub n: usize,
    pub n_loc: usize,
    pub malformed: usize,
    /// Predictions were constant, so the correlations are reported as 0.
    pub degenerate: bool,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn from_records(records: Vec<EvalRecord>) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::UndefinedCorrelation("fewer than two samples"));
        }
        let ys: Vec<f64> = records.iter().map(|r| r.y).collect();
        let preds: Vec<f64> = records.iter().map(|r| r.y_hat.unwrap_or(FALLBACK_SCORE)).collect();
        let (plcc_v, srcc_v, degenerate) = match (plcc(&preds, &ys), srcc(&preds, &ys)) {
            (Ok(p), Ok(s)) => (p, s, false),
            (Err(Error::UndefinedCorrelation(_)), _) | (_, Err(Error::UndefinedCorrelation(_))) => (0.0, 0.0, true),
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let locs: Vec<f64> = records.iter().filter_map(|r| r.acc_loc).collect();
        let acc = if locs.is_empty() {
            0.0
        } else {
            locs.iter().sum::<f64>() / locs.len() as f64
        };
        Ok(Self {
            plcc: plcc_v,
            srcc: srcc_v,
            acc_loc: acc,
            n: records.len(),
            n_loc: locs.len(),
            malformed: records.iter().filter(|r| r.y_hat.is_none()).count(),
            degenerate,
            records,
        })
    }

    /// Per-image CSV: `image_seed,y,y_hat,n_crops,crops,acc_loc`.
    pub fn records_csv(&self) -> String {
        let mut s = String::from("image_seed,y,y_hat,n_crops,crops,acc_loc\n");
        for r in &self.records {
            let crops: Vec<String> = r.crops.iter().map(|c| c.to_string()).collect();
            s.push_str(&format!(
                "{},{:.6},{},{},{},{}\n",
                r.image_seed,
                r.y,
                r.y_hat.map(|v| format!("{v:.6}")).unwrap_or_default(),
                r.crops.len(),
                crops.join(";"),
                r.acc_loc.map(|v| format!("{v:.6}")).unwrap_or_default(),
            ));
        }
        s
    }
}

fn record_for(env: &EnvConfig, img: &SynthImage, y_hat: Option<f64>, crops: Vec<usize>) -> EvalRecord {
    let boxes: Vec<BBox> = crops.iter().map(|&c| BBox::cell(c)).collect();
    let acc = (!crops.is_empty() && !img.patches.is_empty()).then(|| acc_loc(&boxes, &img.patches));
    EvalRecord {
        image_seed: img.seed,
        y: true_score_with(env, img),
        y_hat,
        crops,
        acc_loc: acc,
    }
}

/// Greedy rollouts over `images`. With `crop_perturbation = Some(seed)`,
/// every crop is taken from a perturbed copy of the image while the global
/// view stays clean.
pub fn evaluate(
    policy: &PolicyParams,
    images: &[SynthImage],
    env: &EnvConfig,
    crop_perturbation: Option<(u64, &PerturbConfig)>,
    max_len: usize,
) -> Result<EvalReport> {
    let records: Result<Vec<EvalRecord>> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let traj = match crop_perturbation {
                None => rollout_with(policy, img, img, Decoder::Greedy, max_len)?,
                Some((seed, pcfg)) => {
                    let pert = perturb_with(env, pcfg, img, rng::derive_seed(seed, "evidence", i as u64));
                    rollout_with(policy, img, &pert, Decoder::Greedy, max_len)?
                }
            };
            Ok(record_for(env, img, traj.predicted_score, traj.crops))
        })
        .collect();
    EvalReport::from_records(records?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidencePerturbReport {
    pub clean: EvalReport,
    pub perturbed: EvalReport,
}

impl EvidencePerturbReport {
    pub fn srcc_drop(&self) -> f64 {
        self.clean.srcc - self.perturbed.srcc
    }
}

/// Clean vs. perturbed-crop evaluation of the same policy and images.
pub fn evidence_perturb_eval(
    policy: &PolicyParams,
    images: &[SynthImage],
    seed: u64,
    env: &EnvConfig,
    pcfg: &PerturbConfig,
    max_len: usize,
) -> Result<EvidencePerturbReport> {
    Ok(EvidencePerturbReport {
        clean: evaluate(policy, images, env, None, max_len)?,
        perturbed: evaluate(policy, images, env, Some((seed, pcfg)), max_len)?,
    })
}

/// Localization accuracy of a baseline that makes the same number of tool
/// calls per image as `report` but picks distinct cells uniformly at random.
pub fn random_tool_acc_loc(report: &EvalReport, images: &[SynthImage], seed: u64) -> f64 {
    let mut vals = Vec::new();
    for (i, (r, img)) in report.records.iter().zip(images).enumerate() {
        if r.crops.is_empty() || img.patches.is_empty() {
            continue;
        }
        let mut g = rng::stream(seed, "random-tool", i as u64);
        let mut cells: Vec<usize> = (0..NUM_CELLS).collect();
        cells.shuffle(&mut g);
        let boxes: Vec<BBox> = cells[..r.crops.len().min(NUM_CELLS)].iter().map(|&c| BBox::cell(c)).collect();
        vals.push(acc_loc(&boxes, &img.patches));
    }
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}
