//! Deterministic evaluation: accuracy metrics on every scene plus the task
//! AUC (binary for warning, one-vs-one over the plan candidates for
//! planning).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tip_core::losses::decision_probabilities;
use tip_core::metrics::{displacement_metrics, warning_task_scores, MetricsAccumulator, MetricsReport};
use tip_core::model::forward;
use tip_core::tasks::{planning_utilities, TaskKind, TaskSpec};
use tip_core::{ModelParams, PredictionSampleSet, Scene, Trajectory};

use crate::data::Example;
use crate::Result;

/// Anything that maps a normalized scene (and, for conditional models, an
/// ego plan) to weighted samples in the same frame.
pub trait Predictor {
    fn predict(&self, scene: &Scene, plan: Option<&Trajectory>) -> Result<PredictionSampleSet>;
}

impl Predictor for ModelParams {
    fn predict(&self, scene: &Scene, plan: Option<&Trajectory>) -> Result<PredictionSampleSet> {
        // Dropout is off, so the generator is never drawn from.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(forward(scene, plan, self, false, &mut rng)?)
    }
}

/// Emits the ground-truth future as a single sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, scene: &Scene, _plan: Option<&Trajectory>) -> Result<PredictionSampleSet> {
        Ok(PredictionSampleSet::single(scene.future.clone())?)
    }
}

/// Metrics of `predictor` over prepared examples.
pub fn evaluate_predictor<P: Predictor + ?Sized>(
    predictor: &P,
    examples: &[Example],
    spec: &TaskSpec,
) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new();
    for e in examples {
        let gt = e.scene.future.as_slice();
        match (spec.kind, &e.candidates) {
            (TaskKind::Warning, _) => {
                let preds = predictor.predict(&e.scene, None)?;
                acc.add_displacement(&displacement_metrics(&preds, gt)?);
                let (score, label) = warning_task_scores(&preds, &e.scene, spec)?;
                acc.add_binary(score, label);
            }
            (_, Some(candidates)) => {
                let preds: Vec<PredictionSampleSet> = candidates
                    .plans()
                    .iter()
                    .map(|p| predictor.predict(&e.scene, Some(p)))
                    .collect::<Result<_>>()?;
                acc.add_displacement(&displacement_metrics(&preds[e.normal_index], gt)?);
                let u = planning_utilities(candidates, &preds, e.first_object()?, spec)?;
                acc.add_multiclass(decision_probabilities(&u), e.optimal);
            }
            (_, None) => {
                return Err(crate::HarnessError::ConfigMismatch(
                    "planning evaluation needs plan candidates".into(),
                ))
            }
        }
    }
    Ok(acc.report()?)
}

/// Evaluates trained parameters (dropout off).
pub fn evaluate(params: &ModelParams, examples: &[Example], spec: &TaskSpec) -> Result<MetricsReport> {
    evaluate_predictor(params, examples, spec)
}
