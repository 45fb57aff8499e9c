use rand::Rng;

use crate::autodiff::Tensor;
use crate::Scalar;

use super::{ModelConfig, ModelError, Result};

/// Named learnable tensors. LSTM gate blocks are ordered input, forget,
/// cell, output along the last axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKey {
    StateW,
    StateB,
    LstmWih,
    LstmWhh,
    LstmB,
    TaskW,
    TaskB,
    Dec1W,
    Dec1B,
    Dec2W,
    Dec2B,
    HeadW,
    HeadB,
}

impl ParamKey {
    pub fn name(self) -> &'static str {
        match self {
            ParamKey::StateW => "state.w",
            ParamKey::StateB => "state.b",
            ParamKey::LstmWih => "lstm.w_ih",
            ParamKey::LstmWhh => "lstm.w_hh",
            ParamKey::LstmB => "lstm.b",
            ParamKey::TaskW => "task.w",
            ParamKey::TaskB => "task.b",
            ParamKey::Dec1W => "dec1.w",
            ParamKey::Dec1B => "dec1.b",
            ParamKey::Dec2W => "dec2.w",
            ParamKey::Dec2B => "dec2.b",
            ParamKey::HeadW => "head.w",
            ParamKey::HeadB => "head.b",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ALL_KEYS.iter().copied().find(|k| k.name() == name)
    }

    /// Keys present for a config, in storage order.
    pub fn for_config(cfg: &ModelConfig) -> Vec<ParamKey> {
        ALL_KEYS
            .iter()
            .copied()
            .filter(|k| cfg.has_task_encoder || !matches!(k, ParamKey::TaskW | ParamKey::TaskB))
            .collect()
    }

    pub fn shape(self, cfg: &ModelConfig) -> Vec<usize> {
        let h = cfg.hidden;
        match self {
            ParamKey::StateW => vec![2, h],
            ParamKey::StateB | ParamKey::TaskB | ParamKey::Dec1B | ParamKey::Dec2B => vec![1, h],
            ParamKey::LstmWih | ParamKey::LstmWhh => vec![h, 4 * h],
            ParamKey::LstmB => vec![1, 4 * h],
            ParamKey::TaskW => vec![2 * cfg.t_future, h],
            ParamKey::Dec1W => vec![cfg.decoder_input(), h],
            ParamKey::Dec2W => vec![h, h],
            ParamKey::HeadW => vec![h, cfg.head_outputs()],
            ParamKey::HeadB => vec![1, cfg.head_outputs()],
        }
    }

    fn is_bias(self) -> bool {
        matches!(
            self,
            ParamKey::StateB
                | ParamKey::LstmB
                | ParamKey::TaskB
                | ParamKey::Dec1B
                | ParamKey::Dec2B
                | ParamKey::HeadB
        )
    }
}

const ALL_KEYS: [ParamKey; 13] = [
    ParamKey::StateW,
    ParamKey::StateB,
    ParamKey::LstmWih,
    ParamKey::LstmWhh,
    ParamKey::LstmB,
    ParamKey::TaskW,
    ParamKey::TaskB,
    ParamKey::Dec1W,
    ParamKey::Dec1B,
    ParamKey::Dec2W,
    ParamKey::Dec2B,
    ParamKey::HeadW,
    ParamKey::HeadB,
];

/// Every learnable tensor of a model together with its config.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    keys: Vec<ParamKey>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Assembles parameters from `(key, tensor)` pairs, checking that the
    /// set and every shape match `config`.
    pub fn from_tensors(config: ModelConfig, named: Vec<(ParamKey, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let keys = ParamKey::for_config(&config);
        if named.len() != keys.len() {
            return Err(ModelError::ConfigMismatch(format!(
                "{} tensors for {} parameters",
                named.len(),
                keys.len()
            )));
        }
        let mut tensors = Vec::with_capacity(keys.len());
        for key in &keys {
            let (_, t) = named
                .iter()
                .find(|(k, _)| k == key)
                .ok_or_else(|| ModelError::ConfigMismatch(format!("missing {}", key.name())))?;
            if t.shape() != key.shape(&config).as_slice() {
                return Err(ModelError::ConfigMismatch(format!(
                    "{} has shape {:?}, expected {:?}",
                    key.name(),
                    t.shape(),
                    key.shape(&config)
                )));
            }
            if !t.is_finite() {
                return Err(ModelError::Format(format!("{} is not finite", key.name())));
            }
            tensors.push(t.clone());
        }
        Ok(Self {
            config,
            keys,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn keys(&self) -> &[ParamKey] {
        &self.keys
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, key: ParamKey) -> Option<&Tensor<T>> {
        self.keys.iter().position(|k| *k == key).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamKey, &Tensor<T>)> {
        self.keys.iter().copied().zip(&self.tensors)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            keys: self.keys.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }
}

/// Affine weights uniform in `±1/sqrt(fan_in)`; biases zero except the
/// LSTM forget-gate block, which starts at 1.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let keys = ParamKey::for_config(cfg);
    let mut tensors = Vec::with_capacity(keys.len());
    for key in &keys {
        let shape = key.shape(cfg);
        let n: usize = shape.iter().product();
        let data: Vec<T> = if key.is_bias() {
            let mut b = vec![T::zero(); n];
            if *key == ParamKey::LstmB {
                let h = cfg.hidden;
                b[h..2 * h].iter_mut().for_each(|v| *v = T::one());
            }
            b
        } else {
            let bound = 1.0 / (shape[0] as f64).sqrt();
            (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect()
        };
        tensors.push(Tensor::new(shape, data)?);
    }
    Ok(ModelParams {
        config: cfg.clone(),
        keys,
        tensors,
    })
}
