//! Minibatch training of the predictor on accuracy plus task loss.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tip_core::autodiff::{adam_step, AdamConfig, AdamState, NodeId};
use tip_core::losses::{accuracy_loss_tape, task_loss_tape, total_loss_tape, LossConfig};
use tip_core::model::{forward_batch, init_params, BoundParams, Checkpoint, ModelConfig};
use tip_core::tasks::{planning_utilities_tape, warning_utilities_tape};
use tip_core::{ModelParams, Scene, Tape, Tensor, Trajectory};

use crate::config::TrainConfig;
use crate::data::Example;
use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch accuracy loss.
    pub l_acc: f64,
    /// Mean batch task loss (negative task reward); 0 when skipped.
    pub l_task: f64,
    pub l_total: f64,
    pub wall_time_s: f64,
}

impl EpochLog {
    /// One `key=value` record; `with_time` appends the wall time, which is
    /// the only field that differs between identical runs.
    pub fn record(&self, with_time: bool) -> String {
        let mut s = format!(
            "epoch={} l_acc={} l_task={} l_total={}",
            self.epoch, self.l_acc, self.l_task, self.l_total
        );
        if with_time {
            write!(s, " wall_time_s={:.3}", self.wall_time_s).expect("write to string");
        }
        s
    }
}

pub fn format_log(log: &[EpochLog], with_time: bool) -> String {
    log.iter().map(|e| e.record(with_time) + "\n").collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Model shape for a set of prepared examples.
pub fn model_config_for(cfg: &TrainConfig, examples: &[Example]) -> Result<ModelConfig> {
    let first = examples
        .first()
        .ok_or_else(|| HarnessError::Data("no training scenes".into()))?;
    let (t_p, t_f) = (first.scene.t_past(), first.scene.t_future());
    for e in examples {
        if e.scene.t_past() != t_p || e.scene.t_future() != t_f {
            return Err(HarnessError::ConfigMismatch(format!(
                "scene {} has horizons {}/{}, expected {t_p}/{t_f}",
                e.scene.id,
                e.scene.t_past(),
                e.scene.t_future()
            )));
        }
        if e.scene.n_agents() > cfg.n_agents {
            return Err(HarnessError::ConfigMismatch(format!(
                "scene {} has {} agents, n_agents is {}",
                e.scene.id,
                e.scene.n_agents(),
                cfg.n_agents
            )));
        }
        if cfg.task.is_planning() && e.candidates.is_none() {
            return Err(HarnessError::ConfigMismatch("planning needs plan candidates".into()));
        }
    }
    Ok(cfg.model_config(t_p, t_f))
}

fn checkpoint(params: &ModelParams, cfg: &TrainConfig, epochs_done: usize) -> Checkpoint {
    Checkpoint {
        params: params.clone(),
        metadata: vec![
            ("task".into(), cfg.task.as_str().into()),
            ("alpha".into(), cfg.alpha.to_string()),
            ("seed".into(), cfg.seed.to_string()),
            ("epochs".into(), epochs_done.to_string()),
            ("utility_noise_sigma".into(), cfg.utility_noise_sigma.to_string()),
        ],
    }
}

/// Losses of one batch recorded on `tape`.
struct BatchLoss {
    total: NodeId,
    acc: NodeId,
    task: Option<NodeId>,
}

fn batch_loss(
    tape: &mut Tape,
    bound: &BoundParams,
    mcfg: &ModelConfig,
    cfg: &TrainConfig,
    batch: &[&Example],
    rng: &mut ChaCha8Rng,
) -> Result<BatchLoss> {
    let scenes: Vec<&Scene> = batch.iter().map(|e| &e.scene).collect();
    let gts: Vec<&[Trajectory]> = batch.iter().map(|e| e.scene.future.as_slice()).collect();
    let with_task = cfg.alpha > 0.0;
    let spec = cfg.task_spec();

    if !cfg.task.is_planning() {
        let decoded = forward_batch(tape, bound, mcfg, &scenes, None, true, rng)?;
        let rows: Vec<usize> = (0..batch.len()).collect();
        let acc = accuracy_loss_tape(tape, &decoded, mcfg, &rows, &gts)?;
        if !with_task {
            return Ok(BatchLoss { total: acc, acc, task: None });
        }
        let ego: Vec<usize> = batch.iter().map(|e| e.scene.ego_index).collect();
        let objects: Vec<&[usize]> = batch.iter().map(|e| e.scene.object_indices.as_slice()).collect();
        let u = warning_utilities_tape(tape, &decoded, mcfg, &rows, &ego, &objects, &spec)?;
        let u = add_utility_noise(tape, u, cfg.utility_noise_sigma, rng)?;
        let optimal: Vec<usize> = batch.iter().map(|e| e.optimal).collect();
        let task = task_loss_tape(tape, u, &optimal)?;
        let total = total_loss_tape(tape, acc, task, &LossConfig { alpha: cfg.alpha, beta: cfg.beta })?;
        return Ok(BatchLoss { total, acc, task: Some(task) });
    }

    if !with_task {
        // Accuracy only: condition on the plan that matches the observed
        // ego future.
        let conditions: Vec<(usize, &Trajectory)> = batch
            .iter()
            .enumerate()
            .map(|(i, e)| Ok((i, e.plan(e.normal_index).ok_or_else(missing)?)))
            .collect::<Result<_>>()?;
        let decoded = forward_batch(tape, bound, mcfg, &scenes, Some(&conditions), true, rng)?;
        let rows: Vec<usize> = (0..batch.len()).collect();
        let acc = accuracy_loss_tape(tape, &decoded, mcfg, &rows, &gts)?;
        return Ok(BatchLoss { total: acc, acc, task: None });
    }

    let m = batch[0].n_plans();
    if batch.iter().any(|e| e.n_plans() != m) {
        return Err(HarnessError::Data("scenes disagree on the number of plans".into()));
    }
    let mut conditions = Vec::with_capacity(batch.len() * m);
    let mut efficiency = Vec::with_capacity(batch.len() * m);
    let mut object_agent = Vec::with_capacity(batch.len() * m);
    for (i, e) in batch.iter().enumerate() {
        let obj = e.first_object()?;
        for j in 0..m {
            conditions.push((i, e.plan(j).ok_or_else(missing)?));
            efficiency.push(e.efficiency[j]);
            object_agent.push(obj);
        }
    }
    let decoded = forward_batch(tape, bound, mcfg, &scenes, Some(&conditions), true, rng)?;
    let acc_rows: Vec<usize> = batch.iter().enumerate().map(|(i, e)| i * m + e.normal_index).collect();
    let acc = accuracy_loss_tape(tape, &decoded, mcfg, &acc_rows, &gts)?;
    let rows: Vec<usize> = (0..conditions.len()).collect();
    let plans: Vec<&Trajectory> = conditions.iter().map(|(_, p)| *p).collect();
    let u = planning_utilities_tape(tape, &decoded, mcfg, &rows, &plans, &efficiency, &object_agent, m, &spec)?;
    let u = add_utility_noise(tape, u, cfg.utility_noise_sigma, rng)?;
    let optimal: Vec<usize> = batch.iter().map(|e| e.optimal).collect();
    let task = task_loss_tape(tape, u, &optimal)?;
    let total = total_loss_tape(tape, acc, task, &LossConfig { alpha: cfg.alpha, beta: cfg.beta })?;
    Ok(BatchLoss { total, acc, task: Some(task) })
}

fn missing() -> HarnessError {
    HarnessError::ConfigMismatch("planning needs plan candidates".into())
}

/// `u + σ·|u|·z` with `z` standard normal; the perturbation is a constant,
/// so gradients pass through `u` unchanged.
fn add_utility_noise(tape: &mut Tape, u: NodeId, sigma: f64, rng: &mut ChaCha8Rng) -> Result<NodeId> {
    if sigma <= 0.0 {
        return Ok(u);
    }
    let v = tape.value(u).clone();
    let noise: Vec<f64> = v
        .data()
        .iter()
        .map(|x| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * x.abs() * z
        })
        .collect();
    let n = tape.constant(Tensor::new(v.shape().to_vec(), noise)?);
    Ok(tape.add(u, n)?)
}

/// Trains from freshly initialised parameters.
pub fn train(cfg: &TrainConfig, examples: &[Example]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mcfg = model_config_for(cfg, examples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = init_params(&mcfg, &mut rng)?;
    train_from(cfg, examples, params, &mut rng)
}

/// Trains `params` in place of a fresh initialisation; `rng` drives the
/// shuffling, dropout and utility noise.
pub fn train_from(
    cfg: &TrainConfig,
    examples: &[Example],
    mut params: ModelParams,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    let mcfg = params.config().clone();
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut state = AdamState::new(params.tensors());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let (mut acc_sum, mut task_sum, mut total_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|i| &examples[*i]).collect();
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, &params, true);
            let loss = batch_loss(&mut tape, &bound, &mcfg, cfg, &batch, rng)?;
            let total = tape.value(loss.total).item()?;
            if !total.is_finite() {
                return Err(HarnessError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    last_good: Box::new(checkpoint(&params, cfg, epoch)),
                });
            }
            let grads = tape.backward(loss.total)?;
            let g: Vec<Tensor> = bound.ids().iter().map(|id| grads.wrt(*id)).collect();
            adam_step(params.tensors_mut(), &g, &mut state, &adam_cfg)?;
            acc_sum += tape.value(loss.acc).item()?;
            task_sum += match loss.task {
                Some(t) => tape.value(t).item()?,
                None => 0.0,
            };
            total_sum += total;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        log.push(EpochLog {
            epoch,
            l_acc: acc_sum / n,
            l_task: task_sum / n,
            l_total: total_sum / n,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome {
        checkpoint: checkpoint(&params, cfg, cfg.epochs),
        log,
    })
}
