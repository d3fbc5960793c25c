//! Diagnose-and-edit refinement loop driven by a trained critic policy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rng;
use crate::synthenv::{crop, generate_with, region_features, true_score_with, BBox, EnvConfig, SynthImage, NUM_CELLS};
use crate::trajectory::{encode_region, rollout_with, Decoder, CELL_NORM, DEFAULT_MAX_LEN};

pub const DEFAULT_STOP_THRESHOLD: f64 = 4.5;
pub const DEFAULT_STRENGTH: f64 = 0.7;
pub const DEFAULT_ROUNDS: usize = 3;
/// Clean images sampled when calibrating the artifact threshold.
pub const CALIBRATION_IMAGES: usize = 100;
pub const CALIBRATION_QUANTILE: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Satisfactory,
    NeedsEdit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub score: f64,
    pub flagged_cells: Vec<usize>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditInstruction {
    pub target_cells: Vec<usize>,
    pub strength: f64,
}

/// Artifact statistic of a crop: the deviation of its Laplacian energy from
/// the clean reference, on the scale the policy observes.
pub fn artifact_feature(raw: &[f64; 4]) -> f64 {
    encode_region(raw, &CELL_NORM)[2]
}

/// Nearest-rank `q` quantile; `values` must be nonempty.
fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

/// 90th percentile of the artifact feature over every cell of
/// `CALIBRATION_IMAGES` seeded clean images.
pub fn artifact_threshold(env: &EnvConfig, root: u64) -> f64 {
    let mut vals = Vec::with_capacity(CALIBRATION_IMAGES * NUM_CELLS);
    for i in 0..CALIBRATION_IMAGES {
        let img = generate_with(env, rng::derive_seed(root, "calibration", i as u64), 0);
        for c in 0..NUM_CELLS {
            let g = crop(&img, BBox::cell(c)).expect("cell inside image");
            vals.push(artifact_feature(&region_features(&g)));
        }
    }
    quantile(&mut vals, CALIBRATION_QUANTILE)
}

/// A trained policy used as a quality critic.
#[derive(Clone, Debug)]
pub struct Critic {
    pub params: PolicyParams,
    pub theta_art: f64,
    pub stop_threshold: f64,
    pub max_len: usize,
}

impl Critic {
    pub fn new(params: PolicyParams, theta_art: f64) -> Self {
        Self {
            params,
            theta_art,
            stop_threshold: DEFAULT_STOP_THRESHOLD,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    /// Greedy rollout; flags inspected cells whose crop shows artifacts.
    pub fn diagnose(&self, img: &SynthImage) -> Result<Diagnosis> {
        let traj = rollout_with(&self.params, img, img, Decoder::Greedy, self.max_len)?;
        let score = traj.predicted_score.ok_or(Error::NoScore)?;
        let mut flagged = Vec::new();
        for (&cell, raw) in traj.crops.iter().zip(&traj.observations) {
            if artifact_feature(raw) > self.theta_art && !flagged.contains(&cell) {
                flagged.push(cell);
            }
        }
        let verdict = if score >= self.stop_threshold {
            Verdict::Satisfactory
        } else {
            Verdict::NeedsEdit
        };
        Ok(Diagnosis {
            score,
            flagged_cells: flagged,
            verdict,
        })
    }
}

pub trait Editor {
    fn edit(&self, img: &SynthImage, instr: &EditInstruction) -> Result<SynthImage>;
}

/// Attenuates every distortion inside the target cells by `1 - strength`.
///
/// Patches are split along cell boundaries first, so only the pieces inside
/// target cells change and pixels elsewhere are reproduced bit for bit.
#[derive(Clone, Debug, Default)]
pub struct SyntheticEditor {
    pub env: EnvConfig,
}

impl Editor for SyntheticEditor {
    fn edit(&self, img: &SynthImage, instr: &EditInstruction) -> Result<SynthImage> {
        if !(instr.strength > 0.0 && instr.strength <= 1.0) {
            return Err(Error::Config(format!("edit strength {} outside (0, 1]", instr.strength)));
        }
        if let Some(&c) = instr.target_cells.iter().find(|&&c| c >= NUM_CELLS) {
            return Err(Error::Config(format!("edit target cell {c} outside the grid")));
        }
        let mut patches = Vec::with_capacity(img.patches.len());
        for p in &img.patches {
            let cells = p.bbox.overlapping_cells();
            if !cells.iter().any(|c| instr.target_cells.contains(c)) {
                patches.push(*p);
                continue;
            }
            for c in cells {
                let mut piece = *p;
                piece.bbox = p.bbox.intersect(&BBox::cell(c)).expect("overlapping cell");
                if instr.target_cells.contains(&c) {
                    piece.intensity *= 1.0 - instr.strength;
                }
                patches.push(piece);
            }
        }
        Ok(SynthImage::render(&self.env, img.seed, patches))
    }
}

/// One diagnose step of the loop and the edit it triggered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineStep {
    pub diagnosis: Diagnosis,
    pub instruction: Option<EditInstruction>,
    /// True score of the image the diagnosis looked at.
    pub y_before: f64,
    /// True score after the edit (equal to `y_before` when none was made).
    pub y_after: f64,
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub image: SynthImage,
    pub history: Vec<RefineStep>,
}

impl RefineOutcome {
    pub fn edits(&self) -> usize {
        self.history.iter().filter(|s| s.instruction.is_some()).count()
    }

    /// True score after each of `rounds` edit rounds, index 0 being the input;
    /// the last value carries forward past an early stop.
    pub fn score_trace(&self, rounds: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(rounds + 1);
        out.push(self.history.first().map_or(f64::NAN, |s| s.y_before));
        for i in 0..rounds {
            let prev = out[i];
            out.push(self.history.get(i).map_or(prev, |s| s.y_after));
        }
        out
    }
}

/// Runs up to `rounds` diagnose/edit rounds, stopping at the first
/// satisfactory verdict.
pub fn refine_loop(
    critic: &Critic,
    editor: &dyn Editor,
    env: &EnvConfig,
    img0: &SynthImage,
    rounds: usize,
    strength: f64,
) -> Result<RefineOutcome> {
    if rounds == 0 {
        return Err(Error::Config("refinement rounds must be at least 1".into()));
    }
    let mut img = img0.clone();
    let mut history = Vec::new();
    for _ in 0..rounds {
        let diagnosis = critic.diagnose(&img)?;
        let y_before = true_score_with(env, &img);
        if diagnosis.verdict == Verdict::Satisfactory {
            history.push(RefineStep {
                diagnosis,
                instruction: None,
                y_before,
                y_after: y_before,
            });
            break;
        }
        let instr = EditInstruction {
            target_cells: diagnosis.flagged_cells.clone(),
            strength,
        };
        img = editor.edit(&img, &instr)?;
        history.push(RefineStep {
            diagnosis,
            instruction: Some(instr),
            y_before,
            y_after: true_score_with(env, &img),
        });
    }
    Ok(RefineOutcome { image: img, history })
}

pub const ITERATION_HEADER: &str = "image_seed,iter,y_true,y_hat,n_flagged";

/// One row per diagnosed image state, plus a final row for the image left by
/// the last edit (not diagnosed, so `y_hat` and `n_flagged` are empty).
pub fn iteration_rows(image_seed: u64, outcome: &RefineOutcome) -> String {
    let mut s = String::new();
    for (i, st) in outcome.history.iter().enumerate() {
        s.push_str(&format!(
            "{image_seed},{i},{:.6},{:.6},{}\n",
            st.y_before,
            st.diagnosis.score,
            st.diagnosis.flagged_cells.len()
        ));
    }
    if let Some(last) = outcome.history.last() {
        if last.instruction.is_some() {
            s.push_str(&format!("{image_seed},{},{:.6},,\n", outcome.history.len(), last.y_after));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthenv::{generate, true_score, DistortionKind, DistortionPatch};

    fn editor() -> SyntheticEditor {
        SyntheticEditor::default()
    }

    #[test]
    fn edit_on_clean_cells_is_identity() {
        let img = generate(5, 1);
        let cell = img.patches[0].bbox.overlapping_cells()[0];
        let other: Vec<usize> = (0..NUM_CELLS).filter(|&c| c != cell).collect();
        let out = editor().edit(&img, &EditInstruction { target_cells: other, strength: 0.7 }).unwrap();
        assert_eq!(out.pixels, img.pixels);
        assert_eq!(true_score(&out), true_score(&img));
    }

    #[test]
    fn full_strength_on_all_cells_restores_quality() {
        let img = generate(8, 3);
        let out = editor()
            .edit(&img, &EditInstruction { target_cells: (0..NUM_CELLS).collect(), strength: 1.0 })
            .unwrap();
        assert_eq!(true_score(&out), 5.0);
    }

    #[test]
    fn half_strength_matches_formula() {
        let p = DistortionPatch {
            bbox: BBox::new(8, 8, 16, 16),
            kind: DistortionKind::Noise,
            intensity: 0.8,
            salt: 11,
        };
        let img = SynthImage::render(&EnvConfig::default(), 3, vec![p]);
        let out = editor().edit(&img, &EditInstruction { target_cells: vec![5], strength: 0.5 }).unwrap();
        let expected = 5.0 - 8.0 * 0.4 * 64.0 / (1024.0 * 0.25);
        assert!((true_score(&out) - expected).abs() < 1e-12);
    }

    #[test]
    fn split_patch_keeps_outside_pixels() {
        let p = DistortionPatch {
            bbox: BBox::new(4, 4, 12, 12),
            kind: DistortionKind::Blur,
            intensity: 1.0,
            salt: 2,
        };
        let img = SynthImage::render(&EnvConfig::default(), 9, vec![p]);
        let out = editor().edit(&img, &EditInstruction { target_cells: vec![0], strength: 0.7 }).unwrap();
        let target = BBox::cell(0);
        for y in 0..32 {
            for x in 0..32 {
                if !target.contains(x, y) {
                    assert_eq!(out.pixels.get(x, y).to_bits(), img.pixels.get(x, y).to_bits());
                }
            }
        }
        assert!(true_score(&out) > true_score(&img));
    }

    #[test]
    fn quantile_nearest_rank() {
        let mut v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(quantile(&mut v, 0.9), 9.0);
        assert_eq!(quantile(&mut v, 1.0), 10.0);
        assert_eq!(quantile(&mut [3.0], 0.9), 3.0);
    }

    #[test]
    fn critic_without_tools_flags_nothing() {
        let mut params = PolicyParams::zeros();
        params.set_bias(crate::trajectory::SCORE_OFFSET + 15, 50.0);
        let critic = Critic::new(params, 0.0);
        let d = critic.diagnose(&generate(4, 2)).unwrap();
        assert!(d.flagged_cells.is_empty());
        assert_eq!(d.verdict, Verdict::Satisfactory);
    }

    #[test]
    fn loop_runs_exactly_k_edits_when_never_satisfied() {
        let mut params = PolicyParams::zeros();
        params.set_bias(crate::trajectory::SCORE_OFFSET, 50.0);
        let critic = Critic::new(params, 0.0);
        let img = generate(4, 2);
        let out = refine_loop(&critic, &editor(), &EnvConfig::default(), &img, 3, 0.7).unwrap();
        assert_eq!(out.edits(), 3);
        assert_eq!(out.history.len(), 3);
        let rows = iteration_rows(img.seed, &out);
        assert_eq!(rows.lines().count(), 4);
    }

    #[test]
    fn satisfactory_start_returns_input() {
        let mut params = PolicyParams::zeros();
        params.set_bias(crate::trajectory::SCORE_OFFSET + 15, 50.0);
        let critic = Critic::new(params, 0.0);
        let img = generate(4, 2);
        let out = refine_loop(&critic, &editor(), &EnvConfig::default(), &img, 3, 0.7).unwrap();
        assert_eq!(out.edits(), 0);
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.image, img);
        assert_eq!(out.score_trace(3), vec![true_score(&img); 4]);
    }
}
