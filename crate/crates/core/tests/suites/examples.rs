//! Worked examples for the task utilities, losses and metrics. Closed-form
//! values are compared at 1e-9, composed ones at 1e-6.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tip_core::autodiff::NodeId;
use tip_core::geometry::{Point, Relation};
use tip_core::losses::{
    accuracy_loss, accuracy_loss_tape, best_sample, decision_probabilities, task_loss_tape, task_reward, total_loss,
    total_loss_tape, LossConfig,
};
use tip_core::metrics::{displacement_metrics, roc_auc_binary, roc_auc_ovo, warning_task_scores};
use tip_core::model::{Decoded, ModelConfig};
use tip_core::simgen::{rescale_progress, MotionLimits};
use tip_core::tasks::{
    collision_score_hard, collision_score_soft, ground_truth_decision, u_efficiency, u_planning,
    u_planning_altruistic, u_safety, warning_utilities, warning_utilities_tape, PlanCandidateSet, PlanLabel,
    ReactionOutcome, TaskKind, TaskSpec, WARN,
};
use tip_core::{PredictionSampleSet, Scene, Tape, Tensor, Trajectory};

use super::{close, Check};

const EXACT: f64 = 1e-9;
const COMPOSED: f64 = 1e-6;
const D: f64 = 3.64;

pub const TASKS: &[Check] = &[
    ("efficiency", efficiency),
    ("safety", safety),
    ("planning utility", planning_utility),
    ("altruistic planning utility", altruistic_utility),
    ("hard collision score", hard_collision),
    ("soft collision score", soft_collision),
    ("warning utilities", warning_pair),
    ("ground-truth decision", ground_truth),
];

pub const LOSSES: &[Check] = &[
    ("accuracy loss", accuracy),
    ("task reward", reward),
    ("total loss", total),
    ("total loss gradient", total_gradient),
];

pub const METRICS: &[Check] = &[
    ("displacement metrics", displacement),
    ("binary auc", binary_auc),
    ("one-vs-one auc", ovo_auc),
    ("warning task scores", warning_scores),
];

/// Straight line along x at `speed` m/s and height `y`, `n` steps of 0.1 s.
fn line(speed: f64, y: f64, n: usize) -> Trajectory {
    Trajectory::from_points((0..n).map(|t| Point::new(speed * 0.1 * t as f64, y)).collect()).unwrap()
}

fn fixed(x: f64, y: f64, n: usize) -> Trajectory {
    Trajectory::from_points(vec![Point::new(x, y); n]).unwrap()
}

fn pair(a: Trajectory, b: Trajectory) -> Vec<Trajectory> {
    vec![a, b]
}

pub fn efficiency() {
    assert_eq!(u_efficiency(&fixed(3.0, 4.0, 20)), 0.0);
    assert!(close(u_efficiency(&line(10.0, 0.0, 81)), 80.0, EXACT));
    let normal = line(10.0, 0.0, 40);
    let aggressive = rescale_progress(&normal, 1.2, &MotionLimits::default()).unwrap();
    assert!(close(u_efficiency(&aggressive) / u_efficiency(&normal), 1.2, COMPOSED));
}

pub fn safety() {
    let plan = line(10.0, 0.0, 8);
    let same = PredictionSampleSet::single(pair(plan.clone(), plan.clone())).unwrap();
    assert_eq!(u_safety(&plan, &same, 1, D).unwrap(), 0.0);
    let far = PredictionSampleSet::new(
        vec![pair(plan.clone(), line(10.0, 10.0, 8)), pair(plan.clone(), line(5.0, -25.0, 8))],
        vec![0.5, 0.5],
    )
    .unwrap();
    assert!(close(u_safety(&plan, &far, 1, D).unwrap(), 3.64, EXACT));
    let mixed = PredictionSampleSet::new(
        vec![pair(plan.clone(), line(10.0, 1.0, 8)), pair(plan.clone(), line(10.0, 3.0, 8))],
        vec![0.5, 0.5],
    )
    .unwrap();
    assert!(close(u_safety(&plan, &mixed, 1, D).unwrap(), 2.0, EXACT));
}

pub fn planning_utility() {
    let spec = TaskSpec::new(TaskKind::PlanningSelfish);
    // 16 m of travel, object never closer than the cap.
    let plan = line(20.0, 0.0, 9);
    let preds = PredictionSampleSet::single(pair(plan.clone(), line(20.0, 40.0, 9))).unwrap();
    assert!(close(u_planning(&plan, &preds, 1, &spec).unwrap(), 34.2, COMPOSED));

    // beta = 0 ranks by efficiency alone, whatever the predictions say.
    let no_safety = TaskSpec { beta: 0.0, ..spec };
    let (slow, fast) = (line(8.0, 0.0, 9), line(12.0, 0.0, 9));
    let crash = |p: &Trajectory| PredictionSampleSet::single(pair(p.clone(), p.clone())).unwrap();
    let u_slow = u_planning(&slow, &preds_far(&slow), 1, &no_safety).unwrap();
    let u_fast = u_planning(&fast, &crash(&fast), 1, &no_safety).unwrap();
    assert!(u_fast > u_slow);
    assert!(close(u_fast, u_efficiency(&fast), EXACT));

    // Equal efficiency: the safer plan wins, by beta times the safety gap.
    let (near, wide) = (line(10.0, 0.0, 9), line(10.0, 0.0, 9));
    let obj_near = PredictionSampleSet::single(pair(near.clone(), line(10.0, 1.0, 9))).unwrap();
    let obj_wide = PredictionSampleSet::single(pair(wide.clone(), line(10.0, 3.0, 9))).unwrap();
    let (a, b) = (u_planning(&near, &obj_near, 1, &spec).unwrap(), u_planning(&wide, &obj_wide, 1, &spec).unwrap());
    assert!(b > a);
    assert!(close(b - a, 5.0 * 2.0, EXACT));
}

fn preds_far(plan: &Trajectory) -> PredictionSampleSet {
    let far = plan.translated(Point::new(0.0, 50.0));
    PredictionSampleSet::single(pair(plan.clone(), far)).unwrap()
}

pub fn altruistic_utility() {
    let spec = TaskSpec::new(TaskKind::PlanningAltruistic);
    let object = Trajectory::from_points((0..30).map(|t| Point::new(20.0, -15.0 + 0.8 * t as f64)).collect()).unwrap();
    // Unchanged object: only the safety term differs between plans.
    let (close_plan, far_plan) = (line(10.0, 1.0, 30), line(10.0, -30.0, 30));
    let preds = |p: &Trajectory| PredictionSampleSet::single(pair(p.clone(), object.clone())).unwrap();
    let u_close = u_planning_altruistic(&close_plan, &object, &preds(&close_plan), 1, &spec).unwrap();
    let u_far = u_planning_altruistic(&far_plan, &object, &preds(&far_plan), 1, &spec).unwrap();
    let s_close = u_safety(&close_plan, &preds(&close_plan), 1, spec.d_safe).unwrap();
    let s_far = u_safety(&far_plan, &preds(&far_plan), 1, spec.d_safe).unwrap();
    assert!((u_close < u_far) == (s_close < s_far));
    assert!(close(u_far - u_close, spec.beta * (s_far - s_close), EXACT));

    // The object slows to 0.8x under the aggressive plan.
    let slowed = rescale_progress(&object, 0.8, &MotionLimits::default()).unwrap();
    let plan = line(12.0, -30.0, 30);
    let p = preds(&plan);
    let base = u_planning_altruistic(&plan, &object, &p, 1, &spec).unwrap();
    let slow = u_planning_altruistic(&plan, &slowed, &p, 1, &spec).unwrap();
    let safety = spec.beta * u_safety(&plan, &p, 1, spec.d_safe).unwrap();
    assert!(close((slow - safety) / (base - safety), 0.8, COMPOSED));

    // An object track as long as the ego plan gives the selfish value.
    let plan = line(10.0, 0.0, 30);
    let object = line(10.0, 6.0, 30);
    let p = PredictionSampleSet::single(pair(plan.clone(), object.clone())).unwrap();
    let selfish = u_planning(&plan, &p, 1, &TaskSpec::new(TaskKind::PlanningSelfish)).unwrap();
    assert!(close(u_planning_altruistic(&plan, &object, &p, 1, &spec).unwrap(), selfish, EXACT));
}

pub fn hard_collision() {
    let ego = line(10.0, 0.0, 6);
    assert!(collision_score_hard(&pair(ego.clone(), line(10.0, 2.0, 6)), 0, &[1], D).unwrap());
    assert!(!collision_score_hard(&pair(ego.clone(), line(10.0, 5.0, 6)), 0, &[1], D).unwrap());
    let three = vec![ego.clone(), line(10.0, 7.0, 6), line(10.0, -3.0, 6), line(10.0, 12.0, 6)];
    assert!(collision_score_hard(&three, 0, &[1, 2, 3], D).unwrap());
}

pub fn soft_collision() {
    let ego = line(10.0, 0.0, 6);
    let at = |d: f64| collision_score_soft(&pair(ego.clone(), line(10.0, d, 6)), 0, &[1], D).unwrap();
    assert!(close(at(D), 0.5, EXACT));
    assert!(close(at(D - 1.0), 0.731_058_578_630_004_9, EXACT));
    assert!(at(D + 10.0) < 1e-4);
}

pub fn warning_pair() {
    let spec = TaskSpec::new(TaskKind::Warning);
    let ego = line(10.0, 0.0, 6);
    let hit = pair(ego.clone(), line(10.0, 1.0, 6));
    let miss = pair(ego.clone(), line(10.0, 9.0, 6));
    let all = PredictionSampleSet::new(vec![hit.clone(), hit.clone(), hit.clone()], vec![0.2, 0.3, 0.5]).unwrap();
    assert_eq!(warning_utilities(&all, 0, &[1], &spec, false).unwrap(), (1.0, 0.0));
    let mixed = PredictionSampleSet::new(vec![hit, miss], vec![0.7, 0.3]).unwrap();
    let (w, n) = warning_utilities(&mixed, 0, &[1], &spec, false).unwrap();
    assert!(close(w, 0.7, EXACT) && close(n, 0.3, EXACT));
    assert_eq!(w + n, 1.0);
    let (w, n) = warning_utilities(&mixed, 0, &[1], &spec, true).unwrap();
    assert_eq!(w + n, 1.0);
}

fn scene(ego_future: Trajectory, object_future: Trajectory) -> Scene {
    let past = vec![line(10.0, 0.0, 3), line(10.0, 20.0, 3)];
    Scene::new("s", past, vec![ego_future, object_future], 0, vec![1], Relation::None).unwrap()
}

pub fn ground_truth() {
    let spec = TaskSpec::new(TaskKind::Warning);
    let warn = ground_truth_decision(&scene(line(10.0, 0.0, 10), line(10.0, 2.0, 10)), &spec, None).unwrap();
    assert_eq!(warn.index, WARN);
    assert_eq!(warn.utilities, vec![1.0, 0.0]);
    let calm = ground_truth_decision(&scene(line(10.0, 0.0, 10), line(10.0, 8.0, 10)), &spec, None).unwrap();
    assert_eq!(calm.index, 1 - WARN);

    // The object waits just off the aggressive plan's end point.
    let n = 31;
    let plans: Vec<Trajectory> = PlanLabel::ALL.iter().map(|l| line(10.0 * l.factor(), 0.0, n)).collect();
    let object = fixed(36.0, 1.0, n);
    let outcomes = (0..3)
        .map(|_| {
            vec![ReactionOutcome {
                probability: 1.0,
                object_futures: vec![object.clone()],
            }]
        })
        .collect();
    let cands = PlanCandidateSet::new(plans, PlanLabel::ALL.to_vec()).unwrap().with_outcomes(outcomes).unwrap();
    let s = scene(line(10.0, 0.0, n), object);
    let d = ground_truth_decision(&s, &TaskSpec::new(TaskKind::PlanningSelfish), Some(&cands)).unwrap();
    assert_eq!(cands.labels()[d.index], PlanLabel::Normal);
    let agg = cands.index_of(PlanLabel::Aggressive).unwrap();
    assert!(close(d.utilities[agg], 36.0 + 5.0, COMPOSED));
}

pub fn accuracy() {
    let gt = pair(line(10.0, 0.0, 5), line(10.0, 4.0, 5));
    let exact = PredictionSampleSet::single(gt.clone()).unwrap();
    assert_eq!(accuracy_loss(&exact, &gt).unwrap(), 0.0);

    let off = gt.iter().map(|t| t.translated(Point::new(0.0, 1.0))).collect();
    let two = PredictionSampleSet::new(vec![off, gt.clone()], vec![0.25, 0.75]).unwrap();
    assert!(close(accuracy_loss(&two, &gt).unwrap(), -(0.75f64).ln(), EXACT));
    assert!(close(accuracy_loss(&two, &gt).unwrap(), 0.287_682_072_451_780_9, EXACT));

    let shifted: Vec<Trajectory> = gt.iter().map(|t| t.translated(Point::new(3.0, 4.0))).collect();
    let same = PredictionSampleSet::new(vec![shifted.clone(), shifted.clone(), shifted], vec![0.5, 0.25, 0.25]).unwrap();
    assert_eq!(best_sample(&same, &gt).unwrap(), (0, 5.0));
    assert!(close(accuracy_loss(&same, &gt).unwrap(), -(0.5f64).ln() + 5.0, EXACT));
}

pub fn reward() {
    assert!(close(task_reward(&[0.4, 0.4, 0.4], 2).unwrap(), 1.0 / 3.0, EXACT));
    let e = std::f64::consts::E;
    assert!(close(task_reward(&[1.0, 0.0], 0).unwrap(), e / (e + 1.0), EXACT));
    assert!(close(task_reward(&[1.0, 0.0], 0).unwrap(), 0.731_058_578_630_004_9, EXACT));
    let u = [3.0, -1.0, 0.5];
    for c in [-500.0, 7.25, 1e4] {
        let shifted: Vec<f64> = u.iter().map(|x| x + c).collect();
        for opt in 0..3 {
            assert!(close(task_reward(&shifted, opt).unwrap(), task_reward(&u, opt).unwrap(), EXACT));
        }
    }
    let p = decision_probabilities(&u);
    assert!(close(p.iter().sum::<f64>(), 1.0, EXACT));
}

pub fn total() {
    let cfg = LossConfig::default();
    assert_eq!(total_loss(1.0, 0.5, &cfg), -9.0);
    let tap = LossConfig { alpha: 0.0, ..cfg };
    assert_eq!(total_loss(2.5, 0.9, &tap), 2.5);
    assert_eq!(total_loss(2.5, 0.1, &tap), 2.5);
}

/// Predictions as free parameters: `[1, K·N·T·2]` positions and `[1, K]`
/// logits, with the decoder's softmax on top.
fn free_decoded(tape: &mut Tape, ids: &[NodeId]) -> Decoded {
    let weights = tape.softmax(ids[1]);
    let log_weights = tape.log_softmax(ids[1]);
    Decoded {
        positions: ids[0],
        logits: ids[1],
        weights,
        log_weights,
        rows: 1,
    }
}

pub fn total_gradient() {
    let cfg = ModelConfig {
        n_agents: 2,
        t_past: 1,
        t_future: 4,
        k_samples: 2,
        hidden: 1,
        dropout_rate: 0.0,
        has_task_encoder: false,
        position_scale: 1.0,
    };
    let gt = pair(line(10.0, 0.0, 4), line(10.0, 2.5, 4));
    // Agent separation grows with t, so the closest step is unique.
    let mut positions = Vec::new();
    for k in 0..2 {
        for (a, track) in gt.iter().enumerate() {
            for (t, p) in track.points().iter().enumerate() {
                positions.push(p.x + 0.3 * (k + a) as f64 - 0.1 * t as f64);
                positions.push(p.y + 0.5 * k as f64 + 0.7 * a as f64 + 0.05 * (t * (a + 1)) as f64);
            }
        }
    }
    let params = vec![Tensor::new(vec![1, 16 * 2], positions).unwrap(), Tensor::row(vec![0.3, -0.2])];
    let spec = TaskSpec::new(TaskKind::Warning);
    let loss_cfg = LossConfig::default();
    // which = 0: accuracy only, 1: task only, 2: total
    let build = |tape: &mut Tape, ids: &[NodeId], which: u8| {
        let dec = free_decoded(tape, ids);
        let gts: Vec<&[Trajectory]> = vec![gt.as_slice()];
        let acc = accuracy_loss_tape(tape, &dec, &cfg, &[0], &gts).unwrap();
        let u = warning_utilities_tape(tape, &dec, &cfg, &[0], &[0], &[&[1]], &spec).unwrap();
        let task = task_loss_tape(tape, u, &[WARN]).unwrap();
        match which {
            0 => acc,
            1 => task,
            _ => total_loss_tape(tape, acc, task, &loss_cfg).unwrap(),
        }
    };
    let grad = |which: u8| {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p.clone())).collect();
        let out = build(&mut tape, &ids, which);
        let g = tape.backward(out).unwrap();
        g.wrt(ids[0]).data().to_vec()
    };
    let (g_acc, g_task, g_total) = (grad(0), grad(1), grad(2));
    assert!(g_acc.iter().any(|v| v.abs() > 1e-6));
    assert!(g_task.iter().any(|v| v.abs() > 1e-6));
    for i in 0..g_total.len() {
        assert!(close(g_total[i], g_acc[i] + loss_cfg.alpha * g_task[i], COMPOSED));
    }
    let report = tip_core::autodiff::grad_check(|tape, ids| Ok(build(tape, ids, 2)), &params, 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

pub fn displacement() {
    let gt = pair(line(10.0, 0.0, 6), line(8.0, 3.0, 6));
    let one = displacement_metrics(&PredictionSampleSet::single(gt.clone()).unwrap(), &gt).unwrap();
    assert_eq!((one.min_ade, one.min_fde, one.w_ade, one.w_fde), (0.0, 0.0, 0.0, 0.0));

    let off: Vec<Trajectory> = gt.iter().map(|t| t.translated(Point::new(0.6, 0.8))).collect();
    let two = PredictionSampleSet::new(vec![gt.clone(), off], vec![0.3, 0.7]).unwrap();
    let m = displacement_metrics(&two, &gt).unwrap();
    assert!(close(m.min_ade, 0.0, EXACT) && close(m.w_ade, 0.7, EXACT));
    assert!(close(m.min_fde, 0.0, EXACT) && close(m.w_fde, 0.7, EXACT));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let sample = |rng: &mut ChaCha8Rng| -> Vec<Trajectory> {
            use rand::Rng;
            (0..2)
                .map(|_| {
                    let pts = (0..6).map(|_| Point::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)));
                    Trajectory::from_points(pts.collect()).unwrap()
                })
                .collect()
        };
        let set = PredictionSampleSet::new(vec![sample(&mut rng), sample(&mut rng), sample(&mut rng)], vec![0.2, 0.5, 0.3])
            .unwrap();
        let m = displacement_metrics(&set, &gt).unwrap();
        assert!(m.min_ade <= m.w_ade && m.min_fde <= m.w_fde);
    }
}

/// Pair-counting statistic `P(s+ > s-) + P(s+ = s-)/2`.
pub fn pair_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice, mut pos, mut neg) = (0u128, 0u128, 0u128);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            pos += 1;
        } else {
            neg += 1;
        }
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pos * neg) as f64
}

pub fn binary_auc() {
    assert_eq!(roc_auc_binary(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
    assert_eq!(roc_auc_binary(&[0.4; 5], &[true, false, true, false, false]).unwrap(), 0.5);
    let (s, y) = ([0.9, 0.8, 0.3], [true, false, true]);
    assert_eq!(roc_auc_binary(&s, &y).unwrap(), 0.5);
    assert_eq!(pair_auc(&s, &y), 0.5);
    assert!(roc_auc_binary(&[0.1, 0.2], &[true, true]).is_err());
}

pub fn ovo_auc() {
    let perfect = vec![
        vec![0.8, 0.1, 0.1],
        vec![0.7, 0.2, 0.1],
        vec![0.1, 0.8, 0.1],
        vec![0.2, 0.6, 0.2],
        vec![0.1, 0.1, 0.8],
        vec![0.2, 0.2, 0.6],
    ];
    assert_eq!(roc_auc_ovo(&perfect, &[0, 0, 1, 1, 2, 2]).unwrap(), 1.0);
    let uniform = vec![vec![1.0 / 3.0; 3]; 6];
    assert_eq!(roc_auc_ovo(&uniform, &[0, 1, 2, 0, 1, 2]).unwrap(), 0.5);
    let p0 = [0.9, 0.35, 0.6, 0.2, 0.6, 0.45, 0.05];
    let labels = [0, 1, 0, 1, 1, 0, 1];
    let probs: Vec<Vec<f64>> = p0.iter().map(|p| vec![*p, 1.0 - *p]).collect();
    let y: Vec<bool> = labels.iter().map(|l| *l == 0).collect();
    assert_eq!(roc_auc_ovo(&probs, &labels).unwrap(), roc_auc_binary(&p0, &y).unwrap());
}

pub fn warning_scores() {
    let spec = TaskSpec::new(TaskKind::Warning);
    let ego = line(10.0, 0.0, 8);
    let hit = line(10.0, 1.5, 8);
    let miss = line(10.0, 9.0, 8);
    let colliding = scene(ego.clone(), hit.clone());
    let safe = scene(ego.clone(), miss.clone());
    let all_hit = PredictionSampleSet::new(vec![pair(ego.clone(), hit.clone()); 2], vec![0.5, 0.5]).unwrap();
    assert_eq!(warning_task_scores(&all_hit, &colliding, &spec).unwrap(), (1.0, true));
    let none = PredictionSampleSet::single(pair(ego.clone(), miss.clone())).unwrap();
    assert_eq!(warning_task_scores(&none, &safe, &spec).unwrap(), (0.0, false));
    let mixed = PredictionSampleSet::new(vec![pair(ego.clone(), hit), pair(ego, miss)], vec![0.5, 0.5]).unwrap();
    assert_eq!(warning_task_scores(&mixed, &safe, &spec).unwrap().0, 0.5);
}
