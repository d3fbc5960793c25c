//! Tool-augmented image quality critic trained with group-relative policy
//! optimization on a synthetic distortion environment.
//!
//! The agent reads coarse features of a 32x32 image, may inspect up to three
//! crop cells, and then emits a quality score bin. Rewards sharpen over
//! training, and only image-dependent tokens receive policy gradient.

pub mod egf;
pub mod error;
pub mod experiments;
pub mod grpo;
pub mod metrics;
pub mod pig;
pub mod pcr;
pub mod policy;
pub mod rng;
pub mod synthenv;
pub mod trajectory;

pub use error::{Error, Result};
pub use policy::{Checkpoint, PolicyParams};
pub use synthenv::{BBox, DistortionKind, DistortionPatch, EnvConfig, SynthImage};
pub use trajectory::Trajectory;
