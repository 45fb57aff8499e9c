//! Run configuration and the flat `key = value` config file format.
//!
//! One file mirrors the fields of [`TrainConfig`] and of the scenario
//! generator; `#` starts a comment. Unknown keys are errors.

use std::path::Path;
use std::str::FromStr;

use thiserror::Error;
use tip_core::model::ModelConfig;
use tip_core::simgen::{ConflictGeometry, GeneratorConfig, IdmParams, ReactionMode, ReactionModel};
use tip_core::tasks::{TaskKind, TaskSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value {value:?} for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: TaskKind,
    /// Task loss weight; 0 trains the task-agnostic baseline.
    pub alpha: f64,
    pub beta: f64,
    pub d_safe: f64,
    pub d_warn: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub k_samples: usize,
    pub n_agents: usize,
    pub hidden: usize,
    pub dropout_rate: f64,
    pub position_scale: f64,
    /// Standard deviation of multiplicative utility noise, as a fraction
    /// of `|u|`.
    pub utility_noise_sigma: f64,
    pub reaction: ReactionModel,
    pub reaction_mode: ReactionMode,
    pub split_seed: u64,
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Warning,
            alpha: 20.0,
            beta: 5.0,
            d_safe: tip_core::tasks::DEFAULT_THRESHOLD,
            d_warn: tip_core::tasks::DEFAULT_THRESHOLD,
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            k_samples: 4,
            n_agents: 2,
            hidden: 32,
            dropout_rate: 0.1,
            position_scale: 10.0,
            utility_noise_sigma: 0.0,
            reaction: ReactionModel::Heuristic,
            reaction_mode: ReactionMode::Expected,
            split_seed: 17,
            train_fraction: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.epochs == 0 || self.batch_size == 0 || self.k_samples == 0 || self.n_agents == 0 {
            return bad("epochs, batch_size, k_samples and n_agents must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {}", self.lr));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {}", self.alpha));
        }
        if !(self.utility_noise_sigma >= 0.0 && self.utility_noise_sigma.is_finite()) {
            return bad(format!("utility_noise_sigma {}", self.utility_noise_sigma));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {}", self.train_fraction));
        }
        self.task_spec().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            kind: self.task,
            d_safe: self.d_safe,
            d_warn: self.d_warn,
            beta: self.beta,
        }
    }

    /// Model shape for scenes with the given horizons.
    pub fn model_config(&self, t_past: usize, t_future: usize) -> ModelConfig {
        ModelConfig {
            n_agents: self.n_agents,
            t_past,
            t_future,
            k_samples: self.k_samples,
            hidden: self.hidden,
            dropout_rate: self.dropout_rate,
            has_task_encoder: self.task.is_planning(),
            position_scale: self.position_scale,
        }
    }
}

/// Everything a CLI run needs: scenario generation and training.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn idm(reaction: &mut ReactionModel) -> &mut IdmParams {
    if !matches!(reaction, ReactionModel::Idm(_)) {
        *reaction = ReactionModel::Idm(IdmParams::default());
    }
    match reaction {
        ReactionModel::Idm(p) => p,
        ReactionModel::Heuristic => unreachable!(),
    }
}

impl RunConfig {
    /// Sets one field by its config-file name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let g = &mut self.generator;
        let t = &mut self.train;
        match key {
            "seed" => {
                let s = parse(key, value)?;
                g.seed = s;
                t.seed = s;
            }
            "n_scenes" => g.n_scenes = parse(key, value)?,
            "geometry" => g.geometry = parse::<ConflictGeometry>(key, value)?,
            "speed_min" => g.speed_range.0 = parse(key, value)?,
            "speed_max" => g.speed_range.1 = parse(key, value)?,
            "gap_min" => g.arrival_gap_range.0 = parse(key, value)?,
            "gap_max" => g.arrival_gap_range.1 = parse(key, value)?,
            "noise_sigma" => g.noise_sigma = parse(key, value)?,
            "t_past" => g.t_past = parse(key, value)?,
            "t_future" => g.t_future = parse(key, value)?,
            "dt" => g.dt = parse(key, value)?,
            "n_objects" => g.n_objects = parse(key, value)?,
            "v_max" => g.limits.v_max = parse(key, value)?,
            "a_max" => g.limits.a_max = parse(key, value)?,
            "task" => t.task = parse(key, value)?,
            "alpha" => t.alpha = parse(key, value)?,
            "beta" => t.beta = parse(key, value)?,
            "d_safe" => t.d_safe = parse(key, value)?,
            "d_warn" => t.d_warn = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "k_samples" => t.k_samples = parse(key, value)?,
            "n_agents" => t.n_agents = parse(key, value)?,
            "hidden" => t.hidden = parse(key, value)?,
            "dropout_rate" => t.dropout_rate = parse(key, value)?,
            "position_scale" => t.position_scale = parse(key, value)?,
            "utility_noise_sigma" => t.utility_noise_sigma = parse(key, value)?,
            "split_seed" => t.split_seed = parse(key, value)?,
            "train_fraction" => t.train_fraction = parse(key, value)?,
            "reaction" => {
                t.reaction = match value {
                    "heuristic" => ReactionModel::Heuristic,
                    "idm" => ReactionModel::Idm(IdmParams::default()),
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                            reason: "expected heuristic or idm".into(),
                        })
                    }
                }
            }
            "reaction_mode" => {
                t.reaction_mode = match value {
                    "expected" => ReactionMode::Expected,
                    "sample" => ReactionMode::Sample,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                            reason: "expected expected or sample".into(),
                        })
                    }
                }
            }
            "idm_time_headway" => idm(&mut t.reaction).time_headway = parse(key, value)?,
            "idm_a_max" => idm(&mut t.reaction).a_max = parse(key, value)?,
            "idm_b_comf" => idm(&mut t.reaction).b_comf = parse(key, value)?,
            "idm_s0" => idm(&mut t.reaction).s0 = parse(key, value)?,
            "idm_delta" => idm(&mut t.reaction).delta = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.into(),
                line: i + 1,
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate()?;
        if self.train.n_agents < 1 + self.generator.n_objects {
            return Err(ConfigError::Invalid(format!(
                "n_agents {} cannot hold the ego and {} objects",
                self.train.n_agents, self.generator.n_objects
            )));
        }
        Ok(())
    }
}
