//! Determinism, TAP equivalence and split checks of the training pipeline,
//! plus the end-to-end `gen → train → eval` run through the binary.

use std::fs;
use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tip_core::autodiff::{adam_step, AdamConfig, AdamState};
use tip_core::geometry::Relation;
use tip_core::losses::accuracy_loss_tape;
use tip_core::model::{forward_batch, init_params, save_checkpoint, BoundParams};
use tip_core::simgen::generate_dataset;
use tip_core::tasks::TaskKind;
use tip_core::{ModelParams, Scene, Tape, Tensor, Trajectory};
use tip_harness::data::assert_disjoint;
use tip_harness::experiments::prepare_split;
use tip_harness::train::format_log;
use tip_harness::{evaluate, split_by_id, train, Example, RunConfig, TrainConfig};

use super::{property, Check};

const CASES: u32 = 100;

pub const ALL: &[Check] = &[
    ("training is deterministic", deterministic_training),
    ("alpha = 0 matches accuracy-only training", tap_equivalence_small),
    ("split is disjoint by scenario id", split_disjoint),
];

/// Minimal run: 16 scenes, tiny model, one epoch.
fn tiny_run(seed: u64, task: TaskKind, alpha: f64, noise: f64) -> RunConfig {
    let mut run = RunConfig::default();
    run.set("seed", &seed.to_string()).unwrap();
    for (k, v) in [("n_scenes", "16"), ("t_past", "3"), ("t_future", "30"), ("epochs", "1"), ("hidden", "4")] {
        run.set(k, v).unwrap();
    }
    run.set("batch_size", "6").unwrap();
    run.train.task = task;
    run.train.alpha = alpha;
    run.train.utility_noise_sigma = noise;
    run
}

fn task() -> impl Strategy<Value = TaskKind> {
    prop::sample::select(vec![TaskKind::Warning, TaskKind::PlanningSelfish, TaskKind::PlanningAltruistic])
}

fn checkpoint_bytes(params_run: &tip_harness::TrainOutcome, dir: &Path) -> Vec<u8> {
    let path = dir.join("c.bin");
    save_checkpoint(&params_run.checkpoint, &path).unwrap();
    fs::read(path).unwrap()
}

pub fn deterministic_training() {
    let dir = tempfile::tempdir().unwrap();
    let input = (any::<u64>(), task(), prop::sample::select(vec![0.0, 5.0]), prop::sample::select(vec![0.0, 0.25]));
    property(CASES, input, |(seed, task, alpha, noise)| {
        let run = tiny_run(seed, task, alpha, noise);
        let once = || {
            let scenes = generate_dataset(&run.generator).unwrap();
            let (tr, va) = prepare_split(&run, &run.train, &scenes).unwrap();
            let out = train(&run.train, &tr).unwrap();
            let report = evaluate(&out.checkpoint.params, &va, &run.train.task_spec()).unwrap();
            (checkpoint_bytes(&out, dir.path()), format_log(&out.log, false), report.to_kv_text())
        };
        let (a, b) = (once(), once());
        prop_assert!(a.0 == b.0, "checkpoints differ");
        prop_assert_eq!(a.1, b.1);
        prop_assert_eq!(a.2, b.2);
        Ok(())
    });
}

/// Parameters and per-epoch mean accuracy loss of plain accuracy training,
/// written against the model, loss and optimizer alone. Random draws follow
/// the harness order: initialisation, then per epoch a shuffle and the
/// dropout masks of each batch.
pub fn accuracy_only(cfg: &TrainConfig, examples: &[Example]) -> (ModelParams, Vec<f64>) {
    let first = &examples[0].scene;
    let mcfg = cfg.model_config(first.t_past(), first.t_future());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params: ModelParams = init_params(&mcfg, &mut rng).unwrap();
    let mut state = AdamState::new(params.tensors());
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut losses = Vec::new();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|i| &examples[*i]).collect();
            let scenes: Vec<&Scene> = batch.iter().map(|e| &e.scene).collect();
            let gts: Vec<&[Trajectory]> = batch.iter().map(|e| e.scene.future.as_slice()).collect();
            let conditions: Option<Vec<(usize, &Trajectory)>> = mcfg
                .has_task_encoder
                .then(|| batch.iter().enumerate().map(|(i, e)| (i, e.plan(e.normal_index).unwrap())).collect());
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, &params, true);
            let decoded = forward_batch(&mut tape, &bound, &mcfg, &scenes, conditions.as_deref(), true, &mut rng).unwrap();
            let rows: Vec<usize> = (0..batch.len()).collect();
            let loss = accuracy_loss_tape(&mut tape, &decoded, &mcfg, &rows, &gts).unwrap();
            let grads = tape.backward(loss).unwrap();
            let g: Vec<Tensor> = bound.ids().iter().map(|id| grads.wrt(*id)).collect();
            adam_step(params.tensors_mut(), &g, &mut state, &adam).unwrap();
            sum += tape.value(loss).item().unwrap();
            batches += 1;
        }
        losses.push(sum / batches as f64);
    }
    (params, losses)
}

fn bits(p: &ModelParams) -> Vec<u64> {
    p.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

/// `Err` with a description when α = 0 training differs from
/// [`accuracy_only`] in any bit.
pub fn tap_matches(run: &RunConfig) -> Result<(), String> {
    let scenes = generate_dataset(&run.generator).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { alpha: 0.0, ..run.train.clone() };
    let (tr, _) = prepare_split(run, &cfg, &scenes).map_err(|e| e.to_string())?;
    let harness = train(&cfg, &tr).map_err(|e| e.to_string())?;
    let (params, losses) = accuracy_only(&cfg, &tr);
    if bits(&harness.checkpoint.params) != bits(&params) {
        return Err(format!("{} parameters differ", cfg.task));
    }
    for (e, l) in harness.log.iter().zip(&losses) {
        if e.l_acc.to_bits() != l.to_bits() || e.l_task != 0.0 || e.l_total.to_bits() != l.to_bits() {
            return Err(format!("{} epoch {} log differs: {:?} vs {l}", cfg.task, e.epoch, e));
        }
    }
    Ok(())
}

pub fn tap_equivalence_small() {
    property(CASES, (any::<u64>(), task(), prop::sample::select(vec![0.0, 0.25])), |(seed, task, noise)| {
        let mut run = tiny_run(seed, task, 0.0, noise);
        run.train.epochs = 2;
        tap_matches(&run).map_err(TestCaseError::fail)
    });
}

fn named(n: usize) -> Vec<Scene> {
    let line = Trajectory::from_xy(&[(0.0, 0.0), (1.0, 0.0)]).unwrap();
    let base = Scene::new("", vec![line.clone(); 2], vec![line; 2], 0, vec![1], Relation::None).unwrap();
    (0..n)
        .map(|i| Scene {
            id: format!("scene-{i:04}"),
            ..base.clone()
        })
        .collect()
}

pub fn split_disjoint() {
    let input = (0usize..300, 0.05..0.95f64, any::<u64>(), any::<u64>());
    property(CASES, input, |(n, fraction, split_seed, order_seed)| {
        let mut scenes = named(n);
        let (tr, va) = split_by_id(&scenes, fraction, split_seed).unwrap();
        prop_assert!(assert_disjoint(&tr, &va).is_ok());
        prop_assert_eq!(tr.len() + va.len(), n);
        prop_assert_eq!(tr.len(), (n as f64 * fraction).round() as usize);
        let ids = |s: &[Scene]| {
            let mut v: Vec<String> = s.iter().map(|s| s.id.clone()).collect();
            v.sort();
            v
        };
        // input order does not matter
        scenes.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
        let (tr2, _) = split_by_id(&scenes, fraction, split_seed).unwrap();
        prop_assert_eq!(ids(&tr), ids(&tr2));
        if let (Some(moved), false) = (tr.first(), va.is_empty()) {
            let mut leaky = va.clone();
            leaky.push(moved.clone());
            prop_assert!(assert_disjoint(&tr, &leaky).is_err());
        }
        Ok(())
    });
}

pub fn tip(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_tip")).args(args).output().unwrap()
}

fn tip_ok(args: &[&str]) {
    let out = tip(args);
    assert!(out.status.success(), "tip {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// `gen → train → eval` with `config` in `dir`.
pub fn gen_train_eval(config: &Path, dir: &Path) {
    let (cfg, out) = (config.to_str().unwrap(), dir.to_str().unwrap());
    let data = dir.join("scenes.jsonl");
    let ckpt = dir.join("checkpoint.bin");
    tip_ok(&["gen", "--config", cfg, "--seed", "3", "--out", out]);
    tip_ok(&["train", "--config", cfg, "--seed", "3", "--data", data.to_str().unwrap(), "--out", out]);
    tip_ok(&[
        "eval",
        "--config",
        cfg,
        "--seed",
        "3",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        out,
    ]);
}

pub const RUN_FILES: &[&str] = &["scenes.jsonl", "checkpoint.bin", "train_log.txt", "report.txt", "report.csv"];

/// Runs the pipeline twice and names the first output file that differs.
pub fn end_to_end_identical(config: &Path) -> Result<(), String> {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen_train_eval(config, a.path());
    gen_train_eval(config, b.path());
    for name in RUN_FILES {
        let (x, y) = (fs::read(a.path().join(name)), fs::read(b.path().join(name)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            (Ok(_), Ok(_)) => return Err(format!("{name} differs")),
            _ => return Err(format!("{name} missing")),
        }
    }
    Ok(())
}
