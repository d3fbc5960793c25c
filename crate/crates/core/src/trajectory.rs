//! Interleaved text/tool rollouts over a synthetic image.
//!
//! Vocabulary (40 ids):
//! - `0..8`   analyze tokens (free-form reasoning placeholders)
//! - `8..24`  crop tool calls, one per cell of the 4x4 crop grid
//! - `24..40` score tokens, 16 bins over [1, 5]; bin `b` decodes to its center
//!
//! State features (52 dims):
//! - `0..16`  region features of the four image quadrants (TL, TR, BL, BR)
//! - `16..28` three observation slots, filled in tool-call order
//! - `28..36` which analyze tokens have been emitted
//! - `36..52` which crop cells have been inspected

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rng::Rng;
use crate::synthenv::{region_features, BBox, Grid, SynthImage, NUM_CELLS, NUM_REGION_FEATURES};

pub const NUM_ANALYZE: usize = 8;
pub const NUM_TOOL: usize = NUM_CELLS;
pub const NUM_SCORE_BINS: usize = 16;
pub const VOCAB_SIZE: usize = NUM_ANALYZE + NUM_TOOL + NUM_SCORE_BINS;

pub const TOOL_OFFSET: usize = NUM_ANALYZE;
pub const SCORE_OFFSET: usize = NUM_ANALYZE + NUM_TOOL;

pub const MAX_TOOL_CALLS: usize = 3;
pub const DEFAULT_MAX_LEN: usize = 24;

pub const QUAD_OFFSET: usize = 0;
pub const OBS_OFFSET: usize = 4 * NUM_REGION_FEATURES;
pub const HISTORY_OFFSET: usize = OBS_OFFSET + MAX_TOOL_CALLS * NUM_REGION_FEATURES;
pub const VISITED_OFFSET: usize = HISTORY_OFFSET + NUM_ANALYZE;
pub const FEATURE_DIM: usize = VISITED_OFFSET + NUM_CELLS;
/// Feature dims that carry image content (quadrants and observations).
pub const IMAGE_FEATURE_DIMS: std::ops::Range<usize> = 0..HISTORY_OFFSET;

/// Scales mapping raw region features to O(1) policy inputs.
pub const VARIANCE_SCALE: f64 = 25.0;
pub const LAPLACIAN_SCALE: f64 = 40.0;

pub type Features = [f64; FEATURE_DIM];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Analyze(usize),
    Tool(usize),
    Score(usize),
}

impl Action {
    pub fn from_id(id: usize) -> Result<Self> {
        match id {
            _ if id < TOOL_OFFSET => Ok(Action::Analyze(id)),
            _ if id < SCORE_OFFSET => Ok(Action::Tool(id - TOOL_OFFSET)),
            _ if id < VOCAB_SIZE => Ok(Action::Score(id - SCORE_OFFSET)),
            _ => Err(Error::InvalidAction(id)),
        }
    }

    pub fn id(self) -> usize {
        match self {
            Action::Analyze(i) => i,
            Action::Tool(c) => TOOL_OFFSET + c,
            Action::Score(b) => SCORE_OFFSET + b,
        }
    }
}

/// Center of score bin `b`: `1 + (b + 0.5) * 4 / 16`.
pub fn bin_center(bin: usize) -> f64 {
    1.0 + (bin as f64 + 0.5) * (4.0 / NUM_SCORE_BINS as f64)
}

/// Bin containing `score` (scores outside [1, 5] go to the end bins).
pub fn score_bin(score: f64) -> usize {
    let b = ((score - 1.0) * NUM_SCORE_BINS as f64 / 4.0).floor();
    b.clamp(0.0, (NUM_SCORE_BINS - 1) as f64) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Text,
    ToolCall,
    Observation,
    Score,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenRecord {
    pub action_id: usize,
    pub role: Role,
    pub loss_mask: bool,
    /// Features of the state the token was emitted from (for observations:
    /// the state after the observation was written).
    pub features: Features,
    pub logprob_old: Option<f64>,
}

impl TokenRecord {
    pub fn is_generated(&self) -> bool {
        self.role != Role::Observation
    }
}

/// Clean-image reference statistics for one region scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionNorm {
    pub variance: f64,
    pub laplacian: f64,
    pub range: f64,
}

/// 16x16 quadrants of an undistorted image under the default environment.
pub const QUADRANT_NORM: RegionNorm = RegionNorm {
    variance: 0.0241,
    laplacian: 0.16,
    range: 0.668,
};

/// 8x8 crop cells of an undistorted image under the default environment.
pub const CELL_NORM: RegionNorm = RegionNorm {
    variance: 0.0150,
    laplacian: 0.16,
    range: 0.502,
};

/// Policy-facing encoding of raw region features: centred on the clean
/// reference, with the Laplacian taken as an absolute deviation so that every
/// distortion kind moves it upward.
pub fn encode_region(raw: &[f64; NUM_REGION_FEATURES], norm: &RegionNorm) -> [f64; NUM_REGION_FEATURES] {
    [
        2.0 * (raw[0] - 0.5),
        VARIANCE_SCALE * (raw[1] - norm.variance),
        LAPLACIAN_SCALE * (raw[2] - norm.laplacian).abs(),
        raw[3] - norm.range,
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub features: Features,
    pub tool_calls: usize,
    pub visited: [bool; NUM_CELLS],
    pub len: usize,
    pub terminal: bool,
    pub predicted_score: Option<f64>,
}

pub fn init_state(img: &SynthImage) -> State {
    let mut features = [0.0; FEATURE_DIM];
    let half_w = img.width() / 2;
    let half_h = img.height() / 2;
    for q in 0..4 {
        let (qx, qy) = (q % 2, q / 2);
        let b = BBox::new(qx * half_w, qy * half_h, (qx + 1) * half_w, (qy + 1) * half_h);
        let g = img.pixels.crop(b).expect("quadrant inside image");
        let enc = encode_region(&region_features(&g), &QUADRANT_NORM);
        features[QUAD_OFFSET + q * NUM_REGION_FEATURES..][..NUM_REGION_FEATURES].copy_from_slice(&enc);
    }
    State {
        features,
        tool_calls: 0,
        visited: [false; NUM_CELLS],
        len: 0,
        terminal: false,
        predicted_score: None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: State,
    /// Role the emitted action is recorded under.
    pub role: Role,
    /// Raw region features of the crop, when a crop was returned.
    pub observation: Option<[f64; NUM_REGION_FEATURES]>,
}

/// True when `action_id` would leave the decision-relevant state unchanged:
/// a repeated analyze token or a tool call with no budget left.
pub fn is_noop(state: &State, action_id: usize, max_len: usize) -> bool {
    match Action::from_id(action_id) {
        Ok(Action::Analyze(i)) => state.features[HISTORY_OFFSET + i] != 0.0,
        Ok(Action::Tool(_)) => state.tool_calls >= MAX_TOOL_CALLS || state.len + 2 > max_len,
        Ok(Action::Score(_)) => false,
        Err(_) => true,
    }
}

/// Applies one action.
///
/// A tool call past the 3-call budget, or one that would leave no room for its
/// observation under `max_len`, is recorded as a plain text token and returns
/// no observation.
pub fn step(state: &State, action_id: usize, crop_source: &SynthImage, max_len: usize) -> Result<StepOutcome> {
    let action = Action::from_id(action_id)?;
    debug_assert!(!state.terminal, "step on a terminal state");
    let mut next = state.clone();
    next.len += 1;
    match action {
        Action::Analyze(i) => {
            next.features[HISTORY_OFFSET + i] = 1.0;
            Ok(StepOutcome {
                state: next,
                role: Role::Text,
                observation: None,
            })
        }
        Action::Tool(cell) => {
            if state.tool_calls >= MAX_TOOL_CALLS || state.len + 2 > max_len {
                return Ok(StepOutcome {
                    state: next,
                    role: Role::Text,
                    observation: None,
                });
            }
            let g: Grid = crop_source.pixels.crop(BBox::cell(cell))?;
            let raw = region_features(&g);
            let slot = OBS_OFFSET + state.tool_calls * NUM_REGION_FEATURES;
            next.features[slot..slot + NUM_REGION_FEATURES].copy_from_slice(&encode_region(&raw, &CELL_NORM));
            next.features[VISITED_OFFSET + cell] = 1.0;
            next.visited[cell] = true;
            next.tool_calls += 1;
            next.len += 1;
            Ok(StepOutcome {
                state: next,
                role: Role::ToolCall,
                observation: Some(raw),
            })
        }
        Action::Score(b) => {
            next.terminal = true;
            next.predicted_score = Some(bin_center(b));
            Ok(StepOutcome {
                state: next,
                role: Role::Score,
                observation: None,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub tokens: Vec<TokenRecord>,
    pub image_seed: u64,
    pub tool_calls: usize,
    pub predicted_score: Option<f64>,
    /// Crop cells of successful tool calls, in call order.
    pub crops: Vec<usize>,
    /// Raw observation features of each successful call.
    pub observations: Vec<[f64; NUM_REGION_FEATURES]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn malformed(&self) -> bool {
        self.predicted_score.is_none()
    }

    pub fn crop_boxes(&self) -> Vec<BBox> {
        self.crops.iter().map(|&c| BBox::cell(c)).collect()
    }

    pub fn action_ids(&self) -> Vec<usize> {
        self.tokens
            .iter()
            .filter(|t| t.is_generated())
            .map(|t| t.action_id)
            .collect()
    }

    /// Checks the structural invariants every constructed trajectory obeys.
    pub fn check(&self, max_len: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("malformed trajectory: {m}")));
        if self.len() > max_len {
            return bad("longer than max_len");
        }
        let calls = self.tokens.iter().filter(|t| t.role == Role::ToolCall).count();
        if calls != self.tool_calls || calls > MAX_TOOL_CALLS {
            return bad("tool call count");
        }
        for (i, t) in self.tokens.iter().enumerate() {
            match t.role {
                Role::Observation => {
                    if t.loss_mask || t.logprob_old.is_some() {
                        return bad("observation carries loss or logprob");
                    }
                    if i == 0 || self.tokens[i - 1].role != Role::ToolCall {
                        return bad("observation not preceded by a tool call");
                    }
                }
                _ => {
                    if !t.loss_mask || t.logprob_old.is_none() {
                        return bad("generated token without loss mask or logprob");
                    }
                }
            }
            if t.role == Role::Score && i + 1 != self.len() {
                return bad("score token not last");
            }
        }
        Ok(())
    }
}

/// Positions of generated (non-observation) records, in order.
pub fn generated_indices(traj: &Trajectory) -> Vec<usize> {
    traj.tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_generated())
        .map(|(i, _)| i)
        .collect()
}

/// How the next action is chosen during a rollout.
pub enum Decoder<'r> {
    Sample(&'r mut Rng),
    Greedy,
    /// Replays a fixed action sequence (logprobs still come from the policy).
    Replay(&'r [usize]),
}

/// General rollout: quadrant features come from `global`, crops from
/// `crop_source`.
pub fn rollout_with(
    policy: &PolicyParams,
    global: &SynthImage,
    crop_source: &SynthImage,
    mut decoder: Decoder<'_>,
    max_len: usize,
) -> Result<Trajectory> {
    let max_len = max_len.max(2);
    let mut state = init_state(global);
    let mut traj = Trajectory {
        tokens: Vec::new(),
        image_seed: global.seed,
        tool_calls: 0,
        predicted_score: None,
        crops: Vec::new(),
        observations: Vec::new(),
    };
    let mut replay_pos = 0;
    while !state.terminal && state.len < max_len {
        let (action, logprob) = match &mut decoder {
            Decoder::Sample(rng) => policy.sample(&state.features, *rng)?,
            // A no-op would be chosen again from the same state forever, so
            // argmax decoding skips them.
            Decoder::Greedy => policy.greedy_among(&state.features, |a| !is_noop(&state, a, max_len))?,
            Decoder::Replay(ids) => {
                let Some(&a) = ids.get(replay_pos) else { break };
                replay_pos += 1;
                (a, policy.logprob(&state.features, a)?)
            }
        };
        let out = step(&state, action, crop_source, max_len)?;
        traj.tokens.push(TokenRecord {
            action_id: action,
            role: out.role,
            loss_mask: true,
            features: state.features,
            logprob_old: Some(logprob),
        });
        if let Some(obs) = out.observation {
            traj.tokens.push(TokenRecord {
                action_id: action,
                role: Role::Observation,
                loss_mask: false,
                features: out.state.features,
                logprob_old: None,
            });
            traj.tool_calls += 1;
            traj.crops.push(action - TOOL_OFFSET);
            traj.observations.push(obs);
        }
        state = out.state;
    }
    traj.predicted_score = state.predicted_score;
    debug_assert!(traj.check(max_len).is_ok());
    Ok(traj)
}

/// Sampled rollout at temperature 1 / top-p 1.
pub fn rollout(policy: &PolicyParams, img: &SynthImage, rng: &mut Rng, max_len: usize) -> Result<Trajectory> {
    rollout_with(policy, img, img, Decoder::Sample(rng), max_len)
}

pub fn greedy_rollout(policy: &PolicyParams, img: &SynthImage, max_len: usize) -> Result<Trajectory> {
    rollout_with(policy, img, img, Decoder::Greedy, max_len)
}

/// Pre-action state features of every generated position, rebuilt by
/// replaying the trajectory's actions over `global`/`crop_source`.
pub fn replay_features(
    traj: &Trajectory,
    global: &SynthImage,
    crop_source: &SynthImage,
    max_len: usize,
) -> Result<Vec<Features>> {
    let mut state = init_state(global);
    let mut out = Vec::new();
    for id in traj.action_ids() {
        out.push(state.features);
        state = step(&state, id, crop_source, max_len)?.state;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenLog {
    pub id: usize,
    pub role: Role,
    pub mask: bool,
    pub logprob: Option<f64>,
}

/// One line of the trajectory JSONL log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub seed: u64,
    pub image_seed: u64,
    pub tokens: Vec<TokenLog>,
    pub y: f64,
    pub y_hat: Option<f64>,
    pub reward: f64,
    pub k_t: f64,
}

impl TrajectoryLog {
    pub fn new(traj: &Trajectory, seed: u64, y: f64, reward: f64, k_t: f64) -> Self {
        Self {
            seed,
            image_seed: traj.image_seed,
            tokens: traj
                .tokens
                .iter()
                .map(|t| TokenLog {
                    id: t.action_id,
                    role: t.role,
                    mask: t.loss_mask,
                    logprob: t.logprob_old,
                })
                .collect(),
            y,
            y_hat: traj.predicted_score,
            reward,
            k_t,
        }
    }

    pub fn to_jsonl_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::synthenv::{generate, Grid};

    #[test]
    fn vocabulary_layout() {
        assert_eq!(VOCAB_SIZE, 40);
        assert_eq!(FEATURE_DIM, 52);
        for id in 0..VOCAB_SIZE {
            assert_eq!(Action::from_id(id).unwrap().id(), id);
        }
        assert!(Action::from_id(40).is_err());
        assert_eq!(Action::from_id(8).unwrap(), Action::Tool(0));
        assert_eq!(Action::from_id(24).unwrap(), Action::Score(0));
    }

    #[test]
    fn score_bins_round_trip() {
        for b in 0..NUM_SCORE_BINS {
            assert_eq!(score_bin(bin_center(b)), b);
        }
        assert_eq!(bin_center(0), 1.125);
        assert_eq!(bin_center(15), 4.875);
    }

    #[test]
    fn identical_pixels_identical_state() {
        let a = generate(3, 2);
        let mut b = a.clone();
        b.seed = 999;
        b.patches.clear();
        assert_eq!(init_state(&a), init_state(&b));
    }

    #[test]
    fn constant_image_has_zero_quadrant_variance() {
        let img = SynthImage {
            pixels: Grid::new(32, 32, 0.4),
            patches: vec![],
            seed: 0,
        };
        let s = init_state(&img);
        for q in 0..4 {
            // summation rounding in the mean leaves ~1e-29 of raw variance
            let raw_var = s.features[q * 4 + 1] / VARIANCE_SCALE + QUADRANT_NORM.variance;
            assert!(raw_var.abs() < 1e-15);
            let raw_lap = QUADRANT_NORM.laplacian - s.features[q * 4 + 2] / LAPLACIAN_SCALE;
            assert!(raw_lap.abs() < 1e-12);
        }
    }

    #[test]
    fn init_state_matches_brute_force() {
        let img = generate(21, 3);
        let s = init_state(&img);
        for q in 0..4 {
            let (x0, y0) = ((q % 2) * 16, (q / 2) * 16);
            let mut vals = Vec::new();
            for y in y0..y0 + 16 {
                for x in x0..x0 + 16 {
                    vals.push(img.pixels.get(x, y));
                }
            }
            let mean = vals.iter().sum::<f64>() / 256.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 256.0;
            assert!((s.features[q * 4] - 2.0 * (mean - 0.5)).abs() < 1e-12);
            assert!((s.features[q * 4 + 1] - VARIANCE_SCALE * (var - QUADRANT_NORM.variance)).abs() < 1e-12);
        }
        assert!(s.features[OBS_OFFSET..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn score_step_terminates() {
        let img = generate(1, 1);
        let s = init_state(&img);
        let out = step(&s, SCORE_OFFSET + 5, &img, DEFAULT_MAX_LEN).unwrap();
        assert!(out.state.terminal);
        assert_eq!(out.state.predicted_score, Some(bin_center(5)));
        assert_eq!(out.role, Role::Score);
    }

    #[test]
    fn tool_step_writes_crop_features() {
        let img = generate(2, 2);
        let s = init_state(&img);
        let out = step(&s, TOOL_OFFSET, &img, DEFAULT_MAX_LEN).unwrap();
        let raw = region_features(&img.pixels.crop(BBox::new(0, 0, 8, 8)).unwrap());
        assert_eq!(out.observation, Some(raw));
        assert_eq!(&out.state.features[OBS_OFFSET..OBS_OFFSET + 4], &encode_region(&raw, &CELL_NORM));
        assert_eq!(out.state.features[VISITED_OFFSET], 1.0);
        assert_eq!(out.state.tool_calls, 1);
        assert_eq!(out.state.len, 2);
    }

    #[test]
    fn fourth_tool_call_is_exhausted() {
        let img = generate(2, 2);
        let mut s = init_state(&img);
        for c in 0..3 {
            s = step(&s, TOOL_OFFSET + c, &img, DEFAULT_MAX_LEN).unwrap().state;
        }
        let out = step(&s, TOOL_OFFSET + 9, &img, DEFAULT_MAX_LEN).unwrap();
        assert_eq!(out.observation, None);
        assert_eq!(out.role, Role::Text);
        assert_eq!(out.state.tool_calls, 3);
        assert_eq!(out.state.features[..HISTORY_OFFSET], s.features[..HISTORY_OFFSET]);
        assert_eq!(out.state.features[VISITED_OFFSET + 9], 0.0);
    }

    #[test]
    fn forced_score_gives_length_one() {
        let mut p = PolicyParams::zeros();
        p.set_bias(SCORE_OFFSET + 3, 1e6);
        let img = generate(5, 2);
        let t = rollout(&p, &img, &mut rng::seeded(1), DEFAULT_MAX_LEN).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.predicted_score, Some(bin_center(3)));
    }

    #[test]
    fn rollout_is_deterministic() {
        let p = PolicyParams::zeros();
        let img = generate(5, 2);
        let a = rollout(&p, &img, &mut rng::seeded(8), DEFAULT_MAX_LEN).unwrap();
        let b = rollout(&p, &img, &mut rng::seeded(8), DEFAULT_MAX_LEN).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_policy_length_matches_geometric_stopping() {
        // Generated tokens until the first score token: geometric with
        // p = 16/40, truncated at max_len; E = sum_{k<L} (1-p)^k for the
        // count of draws (ignoring observations, which do not consume draws,
        // but do consume length).
        let p = PolicyParams::zeros();
        let img = generate(5, 2);
        let n = 10_000;
        let mut total = 0usize;
        for s in 0..n {
            let t = rollout(&p, &img, &mut rng::seeded(s), DEFAULT_MAX_LEN).unwrap();
            total += generated_indices(&t).len();
        }
        let mean = total as f64 / n as f64;
        let expected = 1.0 / (16.0 / 40.0);
        assert!((mean - expected).abs() / expected < 0.05, "mean {mean}");
    }

    #[test]
    fn generated_indices_examples() {
        let img = generate(5, 2);
        let ids = [0usize, TOOL_OFFSET + 1, SCORE_OFFSET + 2];
        let t = rollout_with(&PolicyParams::zeros(), &img, &img, Decoder::Replay(&ids), DEFAULT_MAX_LEN).unwrap();
        let roles: Vec<Role> = t.tokens.iter().map(|r| r.role).collect();
        assert_eq!(roles, vec![Role::Text, Role::ToolCall, Role::Observation, Role::Score]);
        assert_eq!(generated_indices(&t), vec![0, 1, 3]);

        let ids = [1usize, 2, SCORE_OFFSET];
        let t = rollout_with(&PolicyParams::zeros(), &img, &img, Decoder::Replay(&ids), DEFAULT_MAX_LEN).unwrap();
        assert_eq!(generated_indices(&t), vec![0, 1, 2]);
    }

    #[test]
    fn random_rollouts_respect_invariants() {
        let p = PolicyParams::zeros();
        for s in 0..1000u64 {
            let img = generate(s, (s % 4) as usize);
            let max_len = 2 + (s as usize % 23);
            let t = rollout(&p, &img, &mut rng::seeded(s + 10_000), max_len).unwrap();
            t.check(max_len).unwrap();
            assert_eq!(generated_indices(&t).len(), t.len() - t.tool_calls);
            assert!(t.tool_calls <= MAX_TOOL_CALLS);
        }
    }

    #[test]
    fn max_len_without_score_is_malformed() {
        let mut p = PolicyParams::zeros();
        p.set_bias(0, 1e6);
        let img = generate(5, 2);
        let t = rollout(&p, &img, &mut rng::seeded(1), DEFAULT_MAX_LEN).unwrap();
        assert_eq!(t.len(), DEFAULT_MAX_LEN);
        assert!(t.malformed());
    }

    #[test]
    fn replay_reproduces_features() {
        let p = PolicyParams::zeros();
        let img = generate(31, 3);
        let t = rollout(&p, &img, &mut rng::seeded(4), DEFAULT_MAX_LEN).unwrap();
        let f = replay_features(&t, &img, &img, DEFAULT_MAX_LEN).unwrap();
        let stored: Vec<Features> = t.tokens.iter().filter(|r| r.is_generated()).map(|r| r.features).collect();
        assert_eq!(f, stored);
    }

    #[test]
    fn jsonl_line_round_trips() {
        let img = generate(31, 1);
        let t = rollout(&PolicyParams::zeros(), &img, &mut rng::seeded(4), DEFAULT_MAX_LEN).unwrap();
        let log = TrajectoryLog::new(&t, 4, 3.5, 0.7, 15.0);
        let line = log.to_jsonl_line().unwrap();
        assert!(!line.contains('\n'));
        let back: TrajectoryLog = serde_json::from_str(&line).unwrap();
        assert_eq!(back, log);
    }
}
