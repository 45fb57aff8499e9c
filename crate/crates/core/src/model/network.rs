use rand::Rng;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::geometry::{Scene, Trajectory};
use crate::Scalar;

use super::{ModelConfig, ModelError, ModelParams, ParamKey, PredictionSampleSet, Result};

/// Tape handles of every parameter tensor for one forward pass.
#[derive(Debug, Clone)]
pub struct BoundParams {
    keys: Vec<ParamKey>,
    ids: Vec<NodeId>,
}

impl BoundParams {
    /// Records the parameters on `tape`, as differentiable leaves when
    /// `trainable`.
    pub fn bind<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>, trainable: bool) -> Self {
        let ids = params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Self {
            keys: params.keys().to_vec(),
            ids,
        }
    }

    /// Wraps existing leaves, one per key of `cfg` in storage order.
    pub fn from_ids(cfg: &ModelConfig, ids: &[NodeId]) -> Result<Self> {
        let keys = ParamKey::for_config(cfg);
        if keys.len() != ids.len() {
            return Err(ModelError::ConfigMismatch(format!(
                "{} leaves for {} parameters",
                ids.len(),
                keys.len()
            )));
        }
        Ok(Self {
            keys,
            ids: ids.to_vec(),
        })
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn get(&self, key: ParamKey) -> Option<NodeId> {
        self.keys.iter().position(|k| *k == key).map(|i| self.ids[i])
    }

    fn req(&self, key: ParamKey) -> Result<NodeId> {
        self.get(key)
            .ok_or_else(|| ModelError::ConfigMismatch(format!("parameter {} not bound", key.name())))
    }
}

/// Decoder outputs for a batch of rows (one row per conditioned scene).
#[derive(Debug, Clone, Copy)]
pub struct Decoded {
    /// `[rows, K·N·T_f·2]` positions in meters, normalized frame.
    pub positions: NodeId,
    /// `[rows, K]`
    pub logits: NodeId,
    pub weights: NodeId,
    pub log_weights: NodeId,
    pub rows: usize,
}

impl Decoded {
    pub fn sample_set<T: Scalar>(
        &self,
        tape: &Tape<T>,
        cfg: &ModelConfig,
        row: usize,
    ) -> Result<PredictionSampleSet<T>> {
        let p = cfg.position_outputs();
        let k = cfg.k_samples;
        let positions = &tape.value(self.positions).data()[row * p..(row + 1) * p];
        let weights = &tape.value(self.weights).data()[row * k..(row + 1) * k];
        PredictionSampleSet::from_flat(cfg, positions, weights)
    }
}

/// Joint state encoding `h_S`, shape `[scenes, N·hidden]`.
///
/// Missing agents and invalid steps contribute zero position encodings.
pub fn encode_states<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    cfg: &ModelConfig,
    scenes: &[&Scene<T>],
    train: bool,
    rng: &mut R,
) -> Result<NodeId> {
    let n = cfg.n_agents;
    let hid = cfg.hidden;
    for s in scenes {
        if s.n_agents() > n {
            return Err(ModelError::ConfigMismatch(format!(
                "scene {} has {} agents, model expects at most {n}",
                s.id,
                s.n_agents()
            )));
        }
        if s.t_past() != cfg.t_past {
            return Err(ModelError::ConfigMismatch(format!(
                "scene {} has {} past steps, model expects {}",
                s.id,
                s.t_past(),
                cfg.t_past
            )));
        }
    }
    let rows = scenes.len() * n;
    let inv_scale = T::one() / T::lit(cfg.position_scale);
    let rate = T::lit(cfg.dropout_rate);
    let (w_s, b_s) = (bound.req(ParamKey::StateW)?, bound.req(ParamKey::StateB)?);
    let (w_ih, w_hh, b_l) = (
        bound.req(ParamKey::LstmWih)?,
        bound.req(ParamKey::LstmWhh)?,
        bound.req(ParamKey::LstmB)?,
    );

    let mut state: Option<(NodeId, NodeId)> = None;
    for t in 0..cfg.t_past {
        let mut x = Vec::with_capacity(rows * 2);
        let mut mask = Vec::with_capacity(rows * hid);
        for s in scenes {
            for a in 0..n {
                let p = s.past.get(a).and_then(|tr| tr.get(t));
                match p {
                    Some(p) => {
                        x.push(p.x * inv_scale);
                        x.push(p.y * inv_scale);
                    }
                    None => x.extend([T::zero(), T::zero()]),
                }
                mask.extend(std::iter::repeat_n(p.is_some(), hid));
            }
        }
        let x = tape.constant(Tensor::new(vec![rows, 2], x)?);
        let e = tape.matmul(x, w_s)?;
        let e = tape.add(e, b_s)?;
        let e = tape.relu(e);
        let e = tape.dropout(e, rate, rng, train)?;
        let e = if mask.iter().all(|m| *m) {
            e
        } else {
            tape.mask_select(e, &mask)?
        };

        let gates_x = tape.matmul(e, w_ih)?;
        let gates = match state {
            Some((h, _)) => {
                let gates_h = tape.matmul(h, w_hh)?;
                tape.add(gates_x, gates_h)?
            }
            None => gates_x,
        };
        let gates = tape.add(gates, b_l)?;
        let i_raw = tape.slice_cols(gates, 0, hid)?;
        let f_raw = tape.slice_cols(gates, hid, 2 * hid)?;
        let g_raw = tape.slice_cols(gates, 2 * hid, 3 * hid)?;
        let o_raw = tape.slice_cols(gates, 3 * hid, 4 * hid)?;
        let i = tape.sigmoid(i_raw);
        let f = tape.sigmoid(f_raw);
        let g = tape.tanh(g_raw);
        let o = tape.sigmoid(o_raw);
        let ig = tape.mul(i, g)?;
        let c = match state {
            Some((_, c_prev)) => {
                let fc = tape.mul(f, c_prev)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let c_act = tape.tanh(c);
        let h = tape.mul(o, c_act)?;
        state = Some((h, c));
    }
    let (h, _) = state.expect("t_past >= 1");
    Ok(tape.reshape(h, vec![scenes.len(), n * hid])?)
}

/// Task information encoding `h_V` of flattened ego plans, shape
/// `[plans, hidden]`.
pub fn encode_task_info<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    cfg: &ModelConfig,
    plans: &[&Trajectory<T>],
    train: bool,
    rng: &mut R,
) -> Result<NodeId> {
    if !cfg.has_task_encoder {
        return Err(ModelError::NoTaskEncoder);
    }
    let inv_scale = T::one() / T::lit(cfg.position_scale);
    let mut x = Vec::with_capacity(plans.len() * 2 * cfg.t_future);
    for plan in plans {
        if plan.len() != cfg.t_future {
            return Err(ModelError::ConfigMismatch(format!(
                "plan has {} steps, model expects {}",
                plan.len(),
                cfg.t_future
            )));
        }
        for t in 0..plan.len() {
            match plan.get(t) {
                Some(p) => x.extend([p.x * inv_scale, p.y * inv_scale]),
                None => x.extend([T::zero(), T::zero()]),
            }
        }
    }
    let x = tape.constant(Tensor::new(vec![plans.len(), 2 * cfg.t_future], x)?);
    let z = tape.matmul(x, bound.req(ParamKey::TaskW)?)?;
    let z = tape.add(z, bound.req(ParamKey::TaskB)?)?;
    let z = tape.relu(z);
    Ok(tape.dropout(z, T::lit(cfg.dropout_rate), rng, train)?)
}

/// Decodes `h` (`[rows, decoder_input]`) into samples and weights.
pub fn decode<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    cfg: &ModelConfig,
    h: NodeId,
) -> Result<Decoded> {
    let width = tape.value(h).cols();
    if width != cfg.decoder_input() {
        return Err(ModelError::Autodiff(crate::autodiff::AutodiffError::ShapeMismatch {
            op: "decode",
            lhs: tape.shape(h).to_vec(),
            rhs: vec![cfg.decoder_input()],
        }));
    }
    let rows = tape.value(h).rows();
    let z = tape.matmul(h, bound.req(ParamKey::Dec1W)?)?;
    let z = tape.add(z, bound.req(ParamKey::Dec1B)?)?;
    let z = tape.relu(z);
    let z = tape.matmul(z, bound.req(ParamKey::Dec2W)?)?;
    let z = tape.add(z, bound.req(ParamKey::Dec2B)?)?;
    let z = tape.relu(z);
    let out = tape.matmul(z, bound.req(ParamKey::HeadW)?)?;
    let out = tape.add(out, bound.req(ParamKey::HeadB)?)?;
    let p = cfg.position_outputs();
    let raw = tape.slice_cols(out, 0, p)?;
    let positions = tape.scale(raw, T::lit(cfg.position_scale));
    let logits = tape.slice_cols(out, p, p + cfg.k_samples)?;
    let weights = tape.softmax(logits);
    let log_weights = tape.log_softmax(logits);
    Ok(Decoded {
        positions,
        logits,
        weights,
        log_weights,
        rows,
    })
}

/// Batched forward pass.
///
/// With a task encoder, each output row corresponds to one
/// `(scene index, plan)` condition and the scene's state encoding is
/// shared between its conditions. Without one, `conditions` is ignored and
/// there is one row per scene.
pub fn forward_batch<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    cfg: &ModelConfig,
    scenes: &[&Scene<T>],
    conditions: Option<&[(usize, &Trajectory<T>)]>,
    train: bool,
    rng: &mut R,
) -> Result<Decoded> {
    let h_s = encode_states(tape, bound, cfg, scenes, train, rng)?;
    if !cfg.has_task_encoder {
        return decode(tape, bound, cfg, h_s);
    }
    let conditions = conditions.ok_or_else(|| {
        ModelError::ConfigMismatch("a conditioned model needs a plan per row".into())
    })?;
    let rows: Vec<usize> = conditions.iter().map(|(i, _)| *i).collect();
    if let Some(bad) = rows.iter().find(|i| **i >= scenes.len()) {
        return Err(ModelError::ConfigMismatch(format!("condition refers to scene {bad}")));
    }
    let plans: Vec<&Trajectory<T>> = conditions.iter().map(|(_, p)| *p).collect();
    let h_s_rows = tape.gather_rows(h_s, rows)?;
    let h_v = encode_task_info(tape, bound, cfg, &plans, train, rng)?;
    let h = tape.concat(&[h_s_rows, h_v])?;
    decode(tape, bound, cfg, h)
}

/// Single-scene prediction in the (normalized) frame of `scene`. The plan
/// is ignored by models without a task encoder.
pub fn forward<T: Scalar, R: Rng + ?Sized>(
    scene: &Scene<T>,
    plan: Option<&Trajectory<T>>,
    params: &ModelParams<T>,
    train: bool,
    rng: &mut R,
) -> Result<PredictionSampleSet<T>> {
    let cfg = params.config();
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let cond: Vec<(usize, &Trajectory<T>)> = plan.map(|p| (0, p)).into_iter().collect();
    let decoded = forward_batch(
        &mut tape,
        &bound,
        cfg,
        &[scene],
        cfg.has_task_encoder.then_some(cond.as_slice()),
        train,
        rng,
    )?;
    decoded.sample_set(&tape, cfg, 0)
}
