//! Linear-softmax policy over the 40-token vocabulary.
//!
//! Parameters live in one flat vector: the 40x52 weight matrix in row-major
//! order followed by the 40 biases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{FEATURE_DIM, VOCAB_SIZE};

pub const NUM_PARAMS: usize = VOCAB_SIZE * FEATURE_DIM + VOCAB_SIZE;
pub const BIAS_OFFSET: usize = VOCAB_SIZE * FEATURE_DIM;
pub const LAYOUT_VERSION: u32 = 1;

pub type Logits = [f64; VOCAB_SIZE];

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    flat: Vec<f64>,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self::zeros()
    }
}

impl PolicyParams {
    /// All-zero parameters: the uniform policy.
    pub fn zeros() -> Self {
        Self {
            flat: vec![0.0; NUM_PARAMS],
        }
    }

    pub fn from_flat(flat: Vec<f64>) -> Result<Self> {
        if flat.len() != NUM_PARAMS {
            return Err(Error::Dimension {
                expected: NUM_PARAMS,
                got: flat.len(),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy parameters"));
        }
        Ok(Self { flat })
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    #[inline]
    pub fn weight(&self, action: usize, feature: usize) -> f64 {
        self.flat[action * FEATURE_DIM + feature]
    }

    #[inline]
    pub fn bias(&self, action: usize) -> f64 {
        self.flat[BIAS_OFFSET + action]
    }

    pub fn set_weight(&mut self, action: usize, feature: usize, v: f64) {
        self.flat[action * FEATURE_DIM + feature] = v;
    }

    pub fn set_bias(&mut self, action: usize, v: f64) {
        self.flat[BIAS_OFFSET + action] = v;
    }

    pub fn logits(&self, features: &[f64]) -> Result<Logits> {
        if features.len() != FEATURE_DIM {
            return Err(Error::Dimension {
                expected: FEATURE_DIM,
                got: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state features"));
        }
        let mut out = [0.0; VOCAB_SIZE];
        for (a, o) in out.iter_mut().enumerate() {
            let row = &self.flat[a * FEATURE_DIM..(a + 1) * FEATURE_DIM];
            *o = row.iter().zip(features).map(|(w, f)| w * f).sum::<f64>() + self.bias(a);
        }
        Ok(out)
    }

    pub fn log_probs(&self, features: &[f64]) -> Result<Logits> {
        Ok(log_softmax(&self.logits(features)?))
    }

    pub fn probs(&self, features: &[f64]) -> Result<Logits> {
        Ok(softmax(&self.logits(features)?))
    }

    pub fn logprob(&self, features: &[f64], action: usize) -> Result<f64> {
        check_action(action)?;
        Ok(self.log_probs(features)?[action])
    }

    /// Categorical draw from the unmodified softmax (temperature 1, top-p 1).
    pub fn sample(&self, features: &[f64], rng: &mut impl rand::Rng) -> Result<(usize, f64)> {
        let lp = self.log_probs(features)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, l) in lp.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                return Ok((a, *l));
            }
        }
        // Rounding left u above the cumulative sum; take the last nonzero action.
        let a = (0..VOCAB_SIZE).rev().find(|&a| lp[a] > f64::NEG_INFINITY).unwrap_or(VOCAB_SIZE - 1);
        Ok((a, lp[a]))
    }

    /// Argmax decoding; ties go to the lowest id.
    pub fn greedy(&self, features: &[f64]) -> Result<(usize, f64)> {
        self.greedy_among(features, |_| true)
    }

    /// Argmax over the actions accepted by `allowed`; ties go to the lowest
    /// id. Falls back to the unrestricted argmax if nothing is allowed.
    pub fn greedy_among(&self, features: &[f64], allowed: impl Fn(usize) -> bool) -> Result<(usize, f64)> {
        let lp = self.log_probs(features)?;
        let mut best: Option<usize> = None;
        for a in (0..VOCAB_SIZE).filter(|&a| allowed(a)) {
            if best.is_none_or(|b| lp[a] > lp[b]) {
                best = Some(a);
            }
        }
        let best = match best {
            Some(b) => b,
            None => (0..VOCAB_SIZE).fold(0, |b, a| if lp[a] > lp[b] { a } else { b }),
        };
        Ok((best, lp[best]))
    }

    /// Analytic gradient of `log pi(action | features)` in flat layout.
    pub fn grad_logprob(&self, features: &[f64], action: usize) -> Result<Vec<f64>> {
        check_action(action)?;
        let p = self.probs(features)?;
        let mut g = vec![0.0; NUM_PARAMS];
        let mut dz = [0.0; VOCAB_SIZE];
        for (a, d) in dz.iter_mut().enumerate() {
            *d = if a == action { 1.0 } else { 0.0 } - p[a];
        }
        accumulate_logit_grad(&mut g, features, &dz, 1.0);
        Ok(g)
    }
}

fn check_action(action: usize) -> Result<()> {
    if action < VOCAB_SIZE {
        Ok(())
    } else {
        Err(Error::InvalidAction(action))
    }
}

/// `out += scale * d(logits)/d(theta)^T dz`: the W block gets `dz (x) features`,
/// the bias block gets `dz`.
pub fn accumulate_logit_grad(out: &mut [f64], features: &[f64], dz: &Logits, scale: f64) {
    for (a, &d) in dz.iter().enumerate() {
        let c = scale * d;
        if c == 0.0 {
            continue;
        }
        let row = &mut out[a * FEATURE_DIM..(a + 1) * FEATURE_DIM];
        for (r, f) in row.iter_mut().zip(features) {
            *r += c * f;
        }
        out[BIAS_OFFSET + a] += c;
    }
}

pub fn log_softmax(z: &Logits) -> Logits {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let mut out = [0.0; VOCAB_SIZE];
    for (o, v) in out.iter_mut().zip(z) {
        *o = v - lse;
    }
    out
}

pub fn softmax(z: &Logits) -> Logits {
    let mut out = log_softmax(z);
    for v in &mut out {
        *v = v.exp();
    }
    out
}

/// `KL(p || q)` between two categorical distributions given as log-probs.
pub fn kl_from_log_probs(lp: &Logits, lq: &Logits) -> f64 {
    let kl: f64 = lp.iter().zip(lq).map(|(a, b)| a.exp() * (a - b)).sum();
    kl.max(0.0)
}

/// Exact KL between the next-token distributions of two parameter sets.
pub fn kl_exact(p: &PolicyParams, q: &PolicyParams, features: &[f64]) -> Result<f64> {
    Ok(kl_from_log_probs(&p.log_probs(features)?, &q.log_probs(features)?))
}

/// Gradient of `KL(softmax(z) || q)` w.r.t. the logits `z` of the first argument.
pub fn kl_logit_grad(lp: &Logits, lq: &Logits) -> Logits {
    let kl: f64 = lp.iter().zip(lq).map(|(a, b)| a.exp() * (a - b)).sum();
    let mut g = [0.0; VOCAB_SIZE];
    for a in 0..VOCAB_SIZE {
        g[a] = lp[a].exp() * (lp[a] - lq[a] - kl);
    }
    g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDims {
    pub vocab: usize,
    pub features: usize,
}

/// Root seed plus the next training step: every random stream is derived
/// from these two values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub root_seed: u64,
    pub next_step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layout_version: u32,
    pub dims: CheckpointDims,
    pub flat_params: Vec<f64>,
    pub step: u64,
    pub rng_state: RngState,
}

impl Checkpoint {
    pub fn new(params: &PolicyParams, step: u64, root_seed: u64) -> Self {
        Self {
            layout_version: LAYOUT_VERSION,
            dims: CheckpointDims {
                vocab: VOCAB_SIZE,
                features: FEATURE_DIM,
            },
            flat_params: params.flat.clone(),
            step,
            rng_state: RngState {
                root_seed,
                next_step: step,
            },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.layout_version != LAYOUT_VERSION {
            return Err(Error::LayoutVersion {
                expected: LAYOUT_VERSION,
                found: ck.layout_version,
            });
        }
        if ck.dims.vocab != VOCAB_SIZE || ck.dims.features != FEATURE_DIM {
            return Err(Error::Dimension {
                expected: NUM_PARAMS,
                got: ck.dims.vocab * ck.dims.features + ck.dims.vocab,
            });
        }
        Ok(ck)
    }

    pub fn params(&self) -> Result<PolicyParams> {
        PolicyParams::from_flat(self.flat_params.clone())
    }
}
