//! Central-difference checks of the full training loss (accuracy plus task
//! term) for both tasks on tiny random models: N = 2, K = 2, T_f = 5.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tip_core::autodiff::{grad_check, GradCheckReport, NodeId};
use tip_core::geometry::{min_pairwise_distance, normalize_scene};
use tip_core::losses::{accuracy_loss_tape, task_loss_tape, total_loss_tape, LossConfig};
use tip_core::model::{forward, forward_batch, init_params, BoundParams, ModelConfig};
use tip_core::simgen::{
    generate_plan_candidates, generate_scene, simulate_candidates, GeneratorConfig, MotionLimits, ReactionMode,
    ReactionModel,
};
use tip_core::tasks::{
    ground_truth_decision, planning_utilities_tape, u_efficiency, warning_utilities_tape, PlanCandidateSet, TaskKind,
    TaskSpec,
};
use tip_core::{ModelParams, Scene, Tape, Tensor, Trajectory};

use super::{property, Check};

pub const TOL: f64 = 1e-4;
pub const EPS: f64 = 1e-5;
pub const CASES: u32 = 100;

pub fn tiny_config(task_encoder: bool) -> ModelConfig {
    ModelConfig {
        n_agents: 2,
        t_past: 4,
        t_future: 5,
        k_samples: 2,
        hidden: 5,
        dropout_rate: 0.1,
        has_task_encoder: task_encoder,
        position_scale: 10.0,
    }
}

pub fn scenes(seed: u64, n: usize) -> Vec<Scene> {
    let cfg = GeneratorConfig {
        t_past: 4,
        t_future: 5,
        ..GeneratorConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let s = generate_scene(&mut rng, &cfg, format!("g{i}")).unwrap();
            normalize_scene(&s).unwrap().0
        })
        .collect()
}

/// Every entry uniform in ±1. Biases stay clear of the ReLU kinks that an
/// all-zero bias hits on padded inputs.
pub fn random_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: ModelParams = init_params(cfg, &mut rng).unwrap();
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    p
}

type LossFn<'a> = Box<dyn Fn(&mut Tape, &BoundParams) -> NodeId + 'a>;

/// A loss over `params` with its model config.
pub struct Problem<'a> {
    cfg: ModelConfig,
    pub params: ModelParams,
    loss: LossFn<'a>,
}

impl Problem<'_> {
    fn eval_fn(&self) -> impl Fn(&mut Tape, &[NodeId]) -> tip_core::autodiff::Result<NodeId> + '_ {
        move |tape: &mut Tape, ids: &[NodeId]| {
            let bound = BoundParams::from_ids(&self.cfg, ids).unwrap();
            Ok((self.loss)(tape, &bound))
        }
    }

    pub fn grad_check(&self) -> GradCheckReport<f64> {
        grad_check(self.eval_fn(), self.params.tensors(), EPS).unwrap()
    }

    /// Per-coordinate comparison at `EPS`. A coordinate passes when the
    /// relative error is under `TOL` or the difference is within the
    /// rounding noise of the central difference, `10·ε·|f| / eps`. The
    /// second case covers gradients that are zero or nearly so, where
    /// `grad_check`'s 1e-8 floor asks for more than 64-bit differences of a
    /// loss of order 10 can deliver.
    pub fn passes(&self) -> Result<(), TestCaseError> {
        let f = self.eval_fn();
        let value = |ps: &[Tensor]| {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = ps.iter().map(|p| tape.constant(p.clone())).collect();
            let out = f(&mut tape, &ids).unwrap();
            tape.value(out).item().unwrap()
        };
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = self.params.tensors().iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &ids).unwrap();
        let noise = 10.0 * f64::EPSILON * tape.value(out).item().unwrap().abs() / EPS;
        let grads = tape.backward(out).unwrap();
        let mut work = self.params.tensors().to_vec();
        for (pi, id) in ids.iter().enumerate() {
            let analytic = grads.wrt(*id);
            for j in 0..work[pi].len() {
                let orig = work[pi].data()[j];
                work[pi].data_mut()[j] = orig + EPS;
                let plus = value(&work);
                work[pi].data_mut()[j] = orig - EPS;
                let minus = value(&work);
                work[pi].data_mut()[j] = orig;
                let (a, n) = (analytic.data()[j], (plus - minus) / (2.0 * EPS));
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
                if rel >= TOL && (a - n).abs() > noise {
                    return Err(TestCaseError::fail(format!(
                        "param {pi} element {j}: analytic {a} numeric {n} (noise {noise:e})"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn warning_problem(seed: u64) -> Problem<'static> {
    let cfg = tiny_config(false);
    let spec = TaskSpec::new(TaskKind::Warning);
    let batch = scenes(seed, 3);
    let optimal: Vec<usize> = batch
        .iter()
        .map(|s| ground_truth_decision(s, &spec, None).unwrap().index)
        .collect();
    let params = random_params(&cfg, seed ^ 0xa5a5);
    // A threshold at the median predicted distance keeps the sigmoids off
    // their flat tails, where gradients fall below what differences resolve.
    let mut dists: Vec<f64> = Vec::new();
    for s in &batch {
        let preds = forward(s, None, &params, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for k in 0..preds.k() {
            dists.push(min_pairwise_distance(preds.agent(k, 0), preds.agent(k, 1)).unwrap().0);
        }
    }
    dists.sort_by(f64::total_cmp);
    let wide = TaskSpec {
        d_warn: dists[dists.len() / 2],
        ..spec
    };
    let mcfg = cfg.clone();
    let loss = move |tape: &mut Tape, bound: &BoundParams| {
        let refs: Vec<&Scene> = batch.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dec = forward_batch(tape, bound, &mcfg, &refs, None, false, &mut rng).unwrap();
        let rows: Vec<usize> = (0..batch.len()).collect();
        let gts: Vec<&[Trajectory]> = batch.iter().map(|s| s.future.as_slice()).collect();
        let acc = accuracy_loss_tape(tape, &dec, &mcfg, &rows, &gts).unwrap();
        let ego = vec![0; batch.len()];
        let objects: Vec<&[usize]> = batch.iter().map(|s| s.object_indices.as_slice()).collect();
        let u = warning_utilities_tape(tape, &dec, &mcfg, &rows, &ego, &objects, &wide).unwrap();
        let task = task_loss_tape(tape, u, &optimal).unwrap();
        total_loss_tape(tape, acc, task, &LossConfig::default()).unwrap()
    };
    Problem {
        cfg,
        params,
        loss: Box::new(loss),
    }
}

fn planning_inputs(batch: &[Scene], kind: TaskKind) -> (Vec<PlanCandidateSet<f64>>, Vec<usize>) {
    let limits = MotionLimits::default();
    let spec = TaskSpec::new(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cands: Vec<_> = batch
        .iter()
        .map(|s| {
            let plans = generate_plan_candidates(s.ego_future(), &limits).unwrap();
            simulate_candidates(s, plans, &ReactionModel::Heuristic, ReactionMode::Expected, &limits, &mut rng).unwrap()
        })
        .collect();
    let optimal = batch
        .iter()
        .zip(&cands)
        .map(|(s, c)| ground_truth_decision(s, &spec, Some(c)).unwrap().index)
        .collect();
    (cands, optimal)
}

/// Selfish planning for even seeds, altruistic for odd ones.
pub fn planning_problem(seed: u64) -> Problem<'static> {
    let cfg = tiny_config(true);
    let kind = if seed.is_multiple_of(2) { TaskKind::PlanningSelfish } else { TaskKind::PlanningAltruistic };
    let batch = scenes(seed.wrapping_add(10), 2);
    let (cands, optimal) = planning_inputs(&batch, kind);
    // A large safety cap keeps the expected distance below it.
    let spec = TaskSpec {
        d_safe: 200.0,
        beta: 0.5,
        ..TaskSpec::new(kind)
    };
    let params = random_params(&cfg, seed ^ 0x5a5a);
    let mcfg = cfg.clone();
    let loss = move |tape: &mut Tape, bound: &BoundParams| {
        let refs: Vec<&Scene> = batch.iter().collect();
        let m = cands[0].len();
        let mut conditions = Vec::new();
        let mut eff = Vec::new();
        for (i, c) in cands.iter().enumerate() {
            for j in 0..m {
                conditions.push((i, c.plan(j)));
                eff.push(match kind {
                    TaskKind::PlanningAltruistic => c.expected_object_path_length(j, 0).unwrap(),
                    _ => u_efficiency(c.plan(j)),
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dec = forward_batch(tape, bound, &mcfg, &refs, Some(&conditions), false, &mut rng).unwrap();
        let acc_rows: Vec<usize> = (0..batch.len()).map(|i| i * m + 1).collect();
        let gts: Vec<&[Trajectory]> = batch.iter().map(|s| s.future.as_slice()).collect();
        let acc = accuracy_loss_tape(tape, &dec, &mcfg, &acc_rows, &gts).unwrap();
        let rows: Vec<usize> = (0..conditions.len()).collect();
        let plans: Vec<&Trajectory> = conditions.iter().map(|(_, p)| *p).collect();
        let objs = vec![1; rows.len()];
        let u = planning_utilities_tape(tape, &dec, &mcfg, &rows, &plans, &eff, &objs, m, &spec).unwrap();
        let task = task_loss_tape(tape, u, &optimal).unwrap();
        total_loss_tape(tape, acc, task, &LossConfig { alpha: 20.0, beta: spec.beta }).unwrap()
    };
    Problem {
        cfg,
        params,
        loss: Box::new(loss),
    }
}

/// Worst relative error over the first draws of both tasks.
pub fn first_draws_max_error() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..2 {
        for problem in [warning_problem(seed), planning_problem(seed)] {
            worst = worst.max(problem.grad_check().max_rel_error);
        }
    }
    worst
}

pub fn warning_draws() {
    property(CASES, any::<u64>(), |seed| warning_problem(seed).passes());
}

pub fn planning_draws() {
    property(CASES, any::<u64>(), |seed| planning_problem(seed).passes());
}

pub fn quadratic_and_constant() {
    let p = vec![Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap()];
    let quad = grad_check(
        |tape: &mut Tape, ids: &[NodeId]| {
            let sq = tape.mul(ids[0], ids[0])?;
            Ok(tape.sum(sq))
        },
        &p,
        1e-5,
    )
    .unwrap();
    assert!(quad.max_rel_error < 1e-8, "{quad:?}");
    let constant = grad_check(
        |tape: &mut Tape, _ids: &[NodeId]| Ok(tape.constant(Tensor::scalar(4.0))),
        &p,
        1e-5,
    )
    .unwrap();
    assert_eq!(constant.max_rel_error, 0.0);
}

pub const ALL: &[Check] = &[
    ("full-loss gradient, warning", warning_draws),
    ("full-loss gradient, planning", planning_draws),
    ("gradient check on closed forms", quadratic_and_constant),
];
