//! Training objective: a variety-style accuracy loss on the best sample,
//! the softmax task reward over decision utilities, and their weighted sum.
//!
//! Every quantity has a plain value version and a tape version; the two
//! agree to rounding.

use thiserror::Error;

use crate::autodiff::{softmax_row, AutodiffError, NodeId, Tape, Tensor};
use crate::geometry::Trajectory;
use crate::model::{Decoded, ModelConfig, PredictionSampleSet};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("ground truth has no valid step")]
    EmptyGroundTruth,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error("optimal index {index} out of {count} decisions")]
    BadIndex { index: usize, count: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Task loss weight.
    pub alpha: f64,
    /// Safety weight inside the planning utility.
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 20.0,
            beta: 5.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(LossError::InvalidConfig(format!("alpha {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(LossError::InvalidConfig(format!("beta {}", self.beta)));
        }
        Ok(())
    }
}

/// Mean Euclidean distance over the valid `(agent, step)` pairs of `gt`.
/// Agents beyond `gt.len()` in `sample` are ignored.
pub fn joint_ade<T: Scalar>(sample: &[Trajectory<T>], gt: &[Trajectory<T>]) -> Result<T> {
    if gt.len() > sample.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} ground-truth agents, {} predicted",
            gt.len(),
            sample.len()
        )));
    }
    let mut total = T::zero();
    let mut n = 0usize;
    for (s, g) in sample.iter().zip(gt) {
        if s.len() != g.len() {
            return Err(LossError::ShapeMismatch(format!(
                "horizon {} vs ground truth {}",
                s.len(),
                g.len()
            )));
        }
        for (t, p) in g.iter_valid() {
            if let Some(q) = s.get(t) {
                total += q.distance(p);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(LossError::EmptyGroundTruth);
    }
    Ok(total / T::from_usize_lossy(n))
}

/// Index and distance of the sample closest to `gt`; ties go to the lowest
/// index.
pub fn best_sample<T: Scalar>(preds: &PredictionSampleSet<T>, gt: &[Trajectory<T>]) -> Result<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for k in 0..preds.k() {
        let d = joint_ade(preds.sample(k), gt)?;
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((k, d));
        }
    }
    Ok(best.expect("at least one sample"))
}

/// `-log w_k̂ + ADE(x_k̂, gt)` for the closest sample `k̂`.
pub fn accuracy_loss<T: Scalar>(preds: &PredictionSampleSet<T>, gt: &[Trajectory<T>]) -> Result<T> {
    let (k, d) = best_sample(preds, gt)?;
    Ok(-preds.weights()[k].ln() + d)
}

/// Softmax of the utilities (temperature 1).
pub fn decision_probabilities<T: Scalar>(utilities: &[T]) -> Vec<T> {
    softmax_row(utilities)
}

/// Softmax probability of the optimal decision.
pub fn task_reward<T: Scalar>(utilities: &[T], optimal: usize) -> Result<T> {
    if optimal >= utilities.len() {
        return Err(LossError::BadIndex {
            index: optimal,
            count: utilities.len(),
        });
    }
    Ok(decision_probabilities(utilities)[optimal])
}

pub fn total_loss<T: Scalar>(acc: T, r_task: T, cfg: &LossConfig) -> T {
    acc - T::lit(cfg.alpha) * r_task
}

/// Batch-mean accuracy loss on the tape for the decoded rows listed in
/// `rows`, each paired with its ground-truth futures.
///
/// The best sample is selected on values; the gradient flows through its
/// positions and its log-weight.
pub fn accuracy_loss_tape<T: Scalar>(
    tape: &mut Tape<T>,
    decoded: &Decoded,
    cfg: &ModelConfig,
    rows: &[usize],
    gts: &[&[Trajectory<T>]],
) -> Result<NodeId> {
    if rows.len() != gts.len() || rows.is_empty() {
        return Err(LossError::ShapeMismatch(format!(
            "{} rows vs {} ground truths",
            rows.len(),
            gts.len()
        )));
    }
    let p = cfg.position_outputs();
    let k_count = cfg.k_samples;
    let inv_b = T::one() / T::from_usize_lossy(rows.len());
    let mut pos_idx = Vec::new();
    let mut targets = Vec::new();
    let mut coeffs = Vec::new();
    let mut weight_idx = Vec::with_capacity(rows.len());
    for (&row, gt) in rows.iter().zip(gts) {
        if gt.len() > cfg.n_agents {
            return Err(LossError::ShapeMismatch(format!(
                "{} ground-truth agents for a {}-agent model",
                gt.len(),
                cfg.n_agents
            )));
        }
        let flat = &tape.value(decoded.positions).data()[row * p..(row + 1) * p];
        let mut best: Option<(usize, T)> = None;
        let mut n_valid = 0usize;
        for k in 0..k_count {
            let mut total = T::zero();
            n_valid = 0;
            for (a, g) in gt.iter().enumerate() {
                if g.len() != cfg.t_future {
                    return Err(LossError::ShapeMismatch(format!(
                        "ground truth horizon {} vs {}",
                        g.len(),
                        cfg.t_future
                    )));
                }
                for (t, q) in g.iter_valid() {
                    let x = flat[cfg.position_index(k, a, t, 0)];
                    let y = flat[cfg.position_index(k, a, t, 1)];
                    let (dx, dy) = (x - q.x, y - q.y);
                    total += (dx * dx + dy * dy).sqrt();
                    n_valid += 1;
                }
            }
            if n_valid == 0 {
                return Err(LossError::EmptyGroundTruth);
            }
            let d = total / T::from_usize_lossy(n_valid);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((k, d));
            }
        }
        let (k_hat, _) = best.expect("k_samples >= 1");
        let c = inv_b / T::from_usize_lossy(n_valid);
        for (a, g) in gt.iter().enumerate() {
            for (t, q) in g.iter_valid() {
                pos_idx.push(row * p + cfg.position_index(k_hat, a, t, 0));
                pos_idx.push(row * p + cfg.position_index(k_hat, a, t, 1));
                targets.extend([q.x, q.y]);
                coeffs.push(c);
            }
        }
        weight_idx.push(row * k_count + k_hat);
    }
    let m = coeffs.len();
    let picked = tape.gather(decoded.positions, pos_idx, vec![m, 2])?;
    let target = tape.constant(Tensor::new(vec![m, 2], targets)?);
    let diff = tape.sub(picked, target)?;
    let dist = tape.norm_last(diff);
    let coeff = tape.constant(Tensor::new(vec![m, 1], coeffs)?);
    let weighted = tape.mul(dist, coeff)?;
    let ade = tape.sum(weighted);

    let b = weight_idx.len();
    let logw = tape.gather(decoded.log_weights, weight_idx, vec![b])?;
    let logw_sum = tape.sum(logw);
    let nll = tape.scale(logw_sum, -inv_b);
    Ok(tape.add(nll, ade)?)
}

/// Negative batch-mean task reward: `-(1/B) Σ_b softmax(u_b)[opt_b]` for
/// utilities of shape `[B, M]`.
pub fn task_loss_tape<T: Scalar>(tape: &mut Tape<T>, utilities: NodeId, optimal: &[usize]) -> Result<NodeId> {
    let v = tape.value(utilities);
    let (b, m) = (v.rows(), v.cols());
    if optimal.len() != b {
        return Err(LossError::ShapeMismatch(format!(
            "{} optimal indices for {b} rows",
            optimal.len()
        )));
    }
    if let Some(bad) = optimal.iter().find(|o| **o >= m) {
        return Err(LossError::BadIndex { index: *bad, count: m });
    }
    let probs = tape.softmax(utilities);
    let idx = optimal.iter().enumerate().map(|(r, o)| r * m + o).collect();
    let picked = tape.gather(probs, idx, vec![b])?;
    let mean = tape.mean(picked);
    Ok(tape.neg(mean))
}

/// `L_acc + α·L_task` on the tape.
pub fn total_loss_tape<T: Scalar>(
    tape: &mut Tape<T>,
    acc: NodeId,
    task: NodeId,
    cfg: &LossConfig,
) -> Result<NodeId> {
    let scaled = tape.scale(task, T::lit(cfg.alpha));
    Ok(tape.add(acc, scaled)?)
}
