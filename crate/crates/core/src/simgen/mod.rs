//! Synthetic interacting scenarios, ego plan candidates, reactive object
//! simulation and the line-delimited dataset format.
//!
//! Every scene has an ego agent (index 0) and one or more objects on a
//! second path that meets the ego's path at a single conflict point. Each
//! agent drives its path at a sampled constant speed. Noise is added to the
//! observed past only, so ground-truth futures satisfy the motion limits
//! exactly.

mod dataset;
mod plans;
mod reaction;
mod scene;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{GeometryError, Scene, DEFAULT_DT};
use crate::tasks::TaskError;

pub use dataset::{read_dataset, write_dataset, DatasetHeader, DatasetReader, DATASET_VERSION};
pub use plans::{generate_plan_candidates, rescale_progress, speed_profile, MotionLimits};
pub use reaction::{
    reaction_outcomes, simulate_candidates, simulate_reaction_heuristic, simulate_reaction_idm,
    IdmParams, ReactionMode, ReactionModel, ReactionRule,
};
pub use scene::generate_scene;

#[derive(Debug, Error)]
pub enum SimgenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("no usable conflict geometry after {0} attempts")]
    DegenerateGeometry(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimgenError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConflictGeometry {
    /// Paths cross at roughly a right angle.
    Crossing,
    /// The object's path joins the ego's lane.
    Merging,
    /// The object comes from the opposite direction and turns left across
    /// the ego's lane.
    Oncoming,
}

impl ConflictGeometry {
    pub fn as_str(self) -> &'static str {
        match self {
            ConflictGeometry::Crossing => "crossing",
            ConflictGeometry::Merging => "merging",
            ConflictGeometry::Oncoming => "oncoming",
        }
    }
}

impl fmt::Display for ConflictGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConflictGeometry {
    type Err = SimgenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crossing" => Ok(ConflictGeometry::Crossing),
            "merging" => Ok(ConflictGeometry::Merging),
            "oncoming" => Ok(ConflictGeometry::Oncoming),
            other => Err(SimgenError::InvalidConfig(format!("unknown geometry {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_scenes: usize,
    /// Initial speeds, m/s.
    pub speed_range: (f64, f64),
    pub geometry: ConflictGeometry,
    /// Object arrival at the conflict point minus ego arrival, seconds.
    pub arrival_gap_range: (f64, f64),
    /// Standard deviation of the positional noise on observed points, m.
    pub noise_sigma: f64,
    pub seed: u64,
    pub t_past: usize,
    pub t_future: usize,
    pub dt: f64,
    pub n_objects: usize,
    pub limits: MotionLimits,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_scenes: 1000,
            speed_range: (3.0, 15.0),
            geometry: ConflictGeometry::Crossing,
            arrival_gap_range: (-2.0, 2.0),
            noise_sigma: 0.05,
            seed: 0,
            t_past: 11,
            t_future: 80,
            dt: DEFAULT_DT,
            n_objects: 1,
            limits: MotionLimits::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimgenError::InvalidConfig(m));
        let (v_lo, v_hi) = self.speed_range;
        if !(v_lo > 0.0 && v_lo <= v_hi && v_hi.is_finite()) {
            return bad(format!("speed range [{v_lo}, {v_hi}]"));
        }
        if v_hi > self.limits.v_max {
            return bad(format!("speed {v_hi} above v_max {}", self.limits.v_max));
        }
        let (g_lo, g_hi) = self.arrival_gap_range;
        if !(g_lo <= g_hi && g_lo.is_finite() && g_hi.is_finite()) {
            return bad(format!("arrival gap range [{g_lo}, {g_hi}]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {}", self.noise_sigma));
        }
        if self.t_past == 0 || self.t_future < 2 {
            return bad("need t_past >= 1 and t_future >= 2".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt {}", self.dt));
        }
        if self.n_objects == 0 {
            return bad("n_objects must be at least 1".into());
        }
        self.limits.validate()
    }

    /// SHA-256 of every field, identifying the generator settings of a
    /// dataset.
    pub fn digest(&self) -> String {
        let text = format!("{self:?}");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-scene seed derived from the dataset seed (SplitMix64 finaliser), so
/// scene `i` does not depend on how many scenes precede it.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `cfg.n_scenes` scenes, scene `i` drawn from its own derived seed.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Vec<Scene>> {
    cfg.validate()?;
    (0..cfg.n_scenes)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64));
            let id = format!("{}-{}-{i:06}", cfg.geometry, cfg.seed);
            generate_scene(&mut rng, cfg, id)
        })
        .collect()
}
