use std::path::Path;

use cropcritic::grpo::TrainConfig;
use cropcritic::pig::{DEFAULT_ROUNDS, DEFAULT_STOP_THRESHOLD, DEFAULT_STRENGTH};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Every setting a command can read. Loaded from JSON, then patched by
/// `key=value` overrides; unknown keys are rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; the `CROPCRITIC_OUT` variable and `--out` win over it.
    pub out_dir: String,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub pig: PigOptions,
    pub histogram: HistogramOptions,
    pub surface: SurfaceOptions,
    pub ablate: AblateOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: "out".into(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            pig: PigOptions::default(),
            histogram: HistogramOptions::default(),
            surface: SurfaceOptions::default(),
            ablate: AblateOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub n_images: usize,
    pub perturb: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_images: 200,
            perturb: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PigOptions {
    pub k: usize,
    pub stop_threshold: f64,
    pub strength: f64,
    pub n_images: usize,
    pub dump_pgm: bool,
}

impl Default for PigOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_ROUNDS,
            stop_threshold: DEFAULT_STOP_THRESHOLD,
            strength: DEFAULT_STRENGTH,
            n_images: 100,
            dump_pgm: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramOptions {
    pub n_images: usize,
    pub bins: usize,
    pub max: f64,
    /// Dependency threshold whose exceedance fraction is reported.
    pub tau_dep: f64,
}

impl Default for HistogramOptions {
    fn default() -> Self {
        Self {
            n_images: 200,
            bins: 20,
            max: 0.2,
            tau_dep: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceOptions {
    pub t_points: usize,
    pub e_max: f64,
    pub e_points: usize,
}

impl Default for SurfaceOptions {
    fn default() -> Self {
        Self {
            t_points: 3,
            e_max: 1.0,
            e_points: 101,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateOptions {
    pub seeds: Vec<u64>,
    /// Arm names; empty runs every arm.
    pub arms: Vec<String>,
}

impl Default for AblateOptions {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            arms: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("override {0:?} is not of the form key=value")]
    OverrideSyntax(String),
    #[error("config key {key:?}: {detail}")]
    Key { key: String, detail: String },
    #[error("config: {0}")]
    Parse(String),
}

const TOP_LEVEL: [&str; 8] = ["seed", "out_dir", "train", "eval", "pig", "histogram", "surface", "ablate"];

fn set_path(root: &mut Value, path: &[&str], v: Value) -> Result<(), String> {
    let mut cur = root;
    for (i, seg) in path.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| format!("{} is not an object", path[..i].join(".")))?;
        if i + 1 == path.len() {
            obj.insert((*seg).to_string(), v);
            return Ok(());
        }
        cur = obj.entry((*seg).to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Applies one `key=value` override. Keys are dotted paths from the top of
/// the config; a path that does not start with a top-level section is taken
/// relative to `train`. `steps=N` is shorthand for a single epoch of `N`
/// steps. Values parse as JSON where possible and as strings otherwise.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::OverrideSyntax(spec.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::OverrideSyntax(spec.to_string()));
    }
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let err = |detail: String| ConfigError::Key {
        key: key.to_string(),
        detail,
    };
    let segs: Vec<&str> = key.split('.').collect();
    if segs == ["steps"] || segs == ["train", "steps"] {
        let n = value.as_u64().ok_or_else(|| err("expected a non-negative integer".into()))?;
        set_path(root, &["train", "epochs"], Value::from(1)).map_err(err)?;
        return set_path(root, &["train", "steps_per_epoch"], Value::from(n)).map_err(err);
    }
    let mut path = segs.clone();
    if !TOP_LEVEL.contains(&segs[0]) {
        path.insert(0, "train");
    }
    set_path(root, &path, value).map_err(err)
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.display().to_string(),
                source,
            })?;
            serde_json::from_str::<Value>(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
        }
        None => Value::Object(Default::default()),
    };
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    serde_json::from_value(root).map_err(|e| ConfigError::Parse(e.to_string()))
}
