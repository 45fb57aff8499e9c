//! Train/validation split and per-scene task preparation.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tip_core::geometry::normalize_scene;
use tip_core::simgen::{derive_seed, generate_plan_candidates, simulate_candidates, MotionLimits};
use tip_core::tasks::{ground_truth_decision, u_efficiency, PlanCandidateSet, PlanLabel, TaskKind};
use tip_core::{Scene, Trajectory};

use crate::config::TrainConfig;
use crate::{HarnessError, Result};

/// Deterministic split by scenario id: ids are sorted, shuffled with
/// `split_seed` and the first `train_fraction` go to training. The result
/// does not depend on the order of `scenes`.
pub fn split_by_id(scenes: &[Scene], train_fraction: f64, split_seed: u64) -> Result<(Vec<Scene>, Vec<Scene>)> {
    let mut ids: Vec<&str> = scenes.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(HarnessError::Data("duplicate scenario id".into()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let n_train = ((ids.len() as f64) * train_fraction).round() as usize;
    let train_ids: HashSet<&str> = ids[..n_train].iter().copied().collect();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for s in scenes {
        if train_ids.contains(s.id.as_str()) {
            train.push(s.clone());
        } else {
            val.push(s.clone());
        }
    }
    assert_disjoint(&train, &val)?;
    Ok((train, val))
}

pub fn assert_disjoint(train: &[Scene], val: &[Scene]) -> Result<()> {
    let ids: HashSet<&str> = train.iter().map(|s| s.id.as_str()).collect();
    if let Some(s) = val.iter().find(|s| ids.contains(s.id.as_str())) {
        return Err(HarnessError::Data(format!("scenario {} is in both splits", s.id)));
    }
    Ok(())
}

/// A normalized scene with everything the task needs.
#[derive(Debug, Clone)]
pub struct Example {
    pub scene: Scene,
    /// Plan candidates with simulated reactions (planning tasks).
    pub candidates: Option<PlanCandidateSet<f64>>,
    /// Index of the optimal decision under ground truth.
    pub optimal: usize,
    /// Constant efficiency term per plan candidate (planning tasks).
    pub efficiency: Vec<f64>,
    /// Candidate conditioned on for the accuracy loss: the plan equal to the
    /// observed ego future.
    pub normal_index: usize,
}

impl Example {
    pub fn plan(&self, m: usize) -> Option<&Trajectory> {
        self.candidates.as_ref().map(|c| c.plan(m))
    }

    pub fn n_plans(&self) -> usize {
        self.candidates.as_ref().map_or(0, |c| c.len())
    }

    pub fn first_object(&self) -> Result<usize> {
        self.scene
            .object_indices
            .first()
            .copied()
            .ok_or_else(|| HarnessError::Data(format!("scene {} has no objects", self.scene.id)))
    }
}

/// Normalizes every scene and, for planning, builds plan candidates,
/// simulates object reactions and labels the optimal plan. Single-sample
/// reactions draw from a seed derived from `split_seed` and the scene's
/// position in `scenes`.
pub fn prepare_examples(scenes: &[Scene], cfg: &TrainConfig, limits: &MotionLimits) -> Result<Vec<Example>> {
    let spec = cfg.task_spec();
    scenes
        .iter()
        .enumerate()
        .map(|(i, raw)| {
            let (scene, _) = normalize_scene(raw)?;
            if scene.object_indices.is_empty() {
                return Err(HarnessError::Data(format!("scene {} has no objects", scene.id)));
            }
            if spec.kind == TaskKind::Warning {
                let optimal = ground_truth_decision(&scene, &spec, None)?.index;
                return Ok(Example {
                    scene,
                    candidates: None,
                    optimal,
                    efficiency: Vec::new(),
                    normal_index: 0,
                });
            }
            let plans = generate_plan_candidates(scene.ego_future(), limits)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.split_seed ^ 0x5eed, i as u64));
            let candidates = simulate_candidates(&scene, plans, &cfg.reaction, cfg.reaction_mode, limits, &mut rng)?;
            let optimal = ground_truth_decision(&scene, &spec, Some(&candidates))?.index;
            let efficiency = (0..candidates.len())
                .map(|m| match spec.kind {
                    TaskKind::PlanningAltruistic => Ok(candidates.expected_object_path_length(m, 0)?),
                    _ => Ok(u_efficiency(candidates.plan(m))),
                })
                .collect::<Result<Vec<f64>>>()?;
            let normal_index = candidates
                .index_of(PlanLabel::Normal)
                .ok_or_else(|| HarnessError::Data("no normal plan candidate".into()))?;
            Ok(Example {
                scene,
                candidates: Some(candidates),
                optimal,
                efficiency,
                normal_index,
            })
        })
        .collect()
}
