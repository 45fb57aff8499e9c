//! Encoder-decoder trajectory predictor.
//!
//! Per agent, an affine+ReLU layer embeds each observed position and an LSTM
//! folds the embeddings into one hidden vector; agents' vectors are
//! concatenated in scene order. An optional task encoder embeds the ego's
//! candidate plan. A two-layer MLP decoder and a linear head emit `K`
//! joint samples (every agent, every future step) plus `K` weight logits.

mod checkpoint;
mod network;
mod params;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::geometry::{GeometryError, Point, Trajectory, DEFAULT_DT};
use crate::Scalar;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use network::{
    decode, encode_states, encode_task_info, forward, forward_batch, BoundParams, Decoded,
};
pub use params::{init_params, ModelParams, ParamKey};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input does not match the model config: {0}")]
    ConfigMismatch(String),
    #[error("the model has no task information encoder")]
    NoTaskEncoder,
    #[error("invalid prediction set: {0}")]
    InvalidPrediction(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch: manifest {manifest}, payload {payload}")]
    ChecksumMismatch { manifest: String, payload: String },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_agents: usize,
    pub t_past: usize,
    pub t_future: usize,
    pub k_samples: usize,
    pub hidden: usize,
    pub dropout_rate: f64,
    pub has_task_encoder: bool,
    /// Positions enter the network divided by this many meters and leave
    /// it multiplied by it.
    pub position_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_agents: 2,
            t_past: 11,
            t_future: 80,
            k_samples: 4,
            hidden: 32,
            dropout_rate: 0.1,
            has_task_encoder: false,
            position_scale: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_agents", self.n_agents),
            ("t_past", self.t_past),
            ("t_future", self.t_future),
            ("k_samples", self.k_samples),
            ("hidden", self.hidden),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.position_scale > 0.0 && self.position_scale.is_finite()) {
            return Err(ModelError::InvalidConfig("position_scale must be positive".into()));
        }
        Ok(())
    }

    /// Number of position outputs per row: `K · N · T_f · 2`.
    pub fn position_outputs(&self) -> usize {
        self.k_samples * self.n_agents * self.t_future * 2
    }

    pub fn head_outputs(&self) -> usize {
        self.position_outputs() + self.k_samples
    }

    /// Width of the decoder input `h = h_S ⊕ h_V`.
    pub fn decoder_input(&self) -> usize {
        self.hidden * self.n_agents + if self.has_task_encoder { self.hidden } else { 0 }
    }

    /// Flat offset of coordinate `c` of agent `a` at step `t` in sample `k`.
    pub fn position_index(&self, k: usize, a: usize, t: usize, c: usize) -> usize {
        ((k * self.n_agents + a) * self.t_future + t) * 2 + c
    }
}

/// `K` weighted joint futures: `samples[k][agent]` is a trajectory of
/// `T_f` points.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSampleSet<T> {
    samples: Vec<Vec<Trajectory<T>>>,
    weights: Vec<T>,
}

impl<T: Scalar> PredictionSampleSet<T> {
    pub fn new(samples: Vec<Vec<Trajectory<T>>>, weights: Vec<T>) -> Result<Self> {
        let bad = |m: String| Err(ModelError::InvalidPrediction(m));
        if samples.is_empty() || samples.len() != weights.len() {
            return bad(format!("{} samples vs {} weights", samples.len(), weights.len()));
        }
        let n = samples[0].len();
        if n == 0 {
            return bad("samples hold no agents".into());
        }
        let t_f = samples[0][0].len();
        for s in &samples {
            if s.len() != n || s.iter().any(|t| t.len() != t_f) {
                return bad("ragged sample set".into());
            }
        }
        if weights.iter().any(|w| *w < T::zero() || !w.is_finite()) {
            return bad("negative or non-finite weight".into());
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-6) {
            return bad(format!("weights sum to {total}"));
        }
        Ok(Self { samples, weights })
    }

    /// A single sample with weight 1.
    pub fn single(joint: Vec<Trajectory<T>>) -> Result<Self> {
        Self::new(vec![joint], vec![T::one()])
    }

    pub fn k(&self) -> usize {
        self.samples.len()
    }

    pub fn n_agents(&self) -> usize {
        self.samples[0].len()
    }

    pub fn t_future(&self) -> usize {
        self.samples[0][0].len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn samples(&self) -> &[Vec<Trajectory<T>>] {
        &self.samples
    }

    pub fn sample(&self, k: usize) -> &[Trajectory<T>] {
        &self.samples[k]
    }

    pub fn agent(&self, k: usize, agent: usize) -> &Trajectory<T> {
        &self.samples[k][agent]
    }

    /// Same set with every position shifted by `offset`.
    pub fn translated(&self, offset: Point<T>) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| s.iter().map(|t| t.translated(offset)).collect())
                .collect(),
            weights: self.weights.clone(),
        }
    }

    /// Builds a set from a flat position row laid out as
    /// [`ModelConfig::position_index`] and a weight vector.
    pub fn from_flat(cfg: &ModelConfig, positions: &[T], weights: &[T]) -> Result<Self> {
        if positions.len() != cfg.position_outputs() || weights.len() != cfg.k_samples {
            return Err(ModelError::ConfigMismatch(format!(
                "{} positions / {} weights for the configured head",
                positions.len(),
                weights.len()
            )));
        }
        let dt = T::lit(DEFAULT_DT);
        let mut samples = Vec::with_capacity(cfg.k_samples);
        for k in 0..cfg.k_samples {
            let mut joint = Vec::with_capacity(cfg.n_agents);
            for a in 0..cfg.n_agents {
                let pts = (0..cfg.t_future)
                    .map(|t| {
                        Point::new(
                            positions[cfg.position_index(k, a, t, 0)],
                            positions[cfg.position_index(k, a, t, 1)],
                        )
                    })
                    .collect();
                joint.push(Trajectory::new(pts, vec![true; cfg.t_future], dt)?);
            }
            samples.push(joint);
        }
        Self::new(samples, weights.to_vec())
    }
}
