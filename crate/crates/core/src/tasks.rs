//! Downstream decision tasks and their utilities.
//!
//! A task is a finite decision set together with a utility of each decision
//! under a prediction sample set. Two tasks are provided: choosing among
//! ego plan candidates (selfish or altruistic efficiency plus expected
//! safety), and deciding whether to warn a driver about an imminent near
//! collision.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::{AutodiffError, NodeId, Tape, Tensor};
use crate::geometry::{min_pairwise_distance, path_length, GeometryError, Scene, Trajectory};
use crate::model::{Decoded, ModelConfig, PredictionSampleSet};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("horizon mismatch: plan {plan}, predictions {preds}")]
    HorizonMismatch { plan: usize, preds: usize },
    #[error("planning needs simulated object futures for every candidate")]
    MissingSimulatedFutures,
    #[error("scene has no object agent")]
    NoObjects,
    #[error("invalid plan candidates: {0}")]
    InvalidCandidates(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, TaskError>;

/// Default near-collision distance in meters for both tasks.
pub const DEFAULT_THRESHOLD: f64 = 3.64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    PlanningSelfish,
    PlanningAltruistic,
    Warning,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::PlanningSelfish => "planning",
            TaskKind::PlanningAltruistic => "planning_altruistic",
            TaskKind::Warning => "warning",
        }
    }

    pub fn is_planning(self) -> bool {
        !matches!(self, TaskKind::Warning)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planning" | "planning_selfish" => Ok(TaskKind::PlanningSelfish),
            "planning_altruistic" => Ok(TaskKind::PlanningAltruistic),
            "warning" => Ok(TaskKind::Warning),
            other => Err(TaskError::InvalidSpec(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Cap on the safety utility, meters.
    pub d_safe: f64,
    /// Near-collision distance for warnings, meters.
    pub d_warn: f64,
    pub beta: f64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            d_safe: DEFAULT_THRESHOLD,
            d_warn: DEFAULT_THRESHOLD,
            beta: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_safe > 0.0 && self.d_safe.is_finite()) {
            return Err(TaskError::InvalidSpec(format!("d_safe {}", self.d_safe)));
        }
        if !(self.d_warn > 0.0 && self.d_warn.is_finite()) {
            return Err(TaskError::InvalidSpec(format!("d_warn {}", self.d_warn)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(TaskError::InvalidSpec(format!("beta {}", self.beta)));
        }
        Ok(())
    }

    /// Number of decisions: three plans or warn / don't warn.
    pub fn n_decisions(&self) -> usize {
        if self.kind.is_planning() {
            PlanLabel::ALL.len()
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlanLabel {
    Conservative,
    Normal,
    Aggressive,
}

impl PlanLabel {
    pub const ALL: [PlanLabel; 3] = [PlanLabel::Conservative, PlanLabel::Normal, PlanLabel::Aggressive];

    /// Progress scale applied to the observed ego future.
    pub fn factor(self) -> f64 {
        match self {
            PlanLabel::Conservative => 0.8,
            PlanLabel::Normal => 1.0,
            PlanLabel::Aggressive => 1.2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PlanLabel::Conservative => "conservative",
            PlanLabel::Normal => "normal",
            PlanLabel::Aggressive => "aggressive",
        }
    }
}

/// One possible reaction of the objects to a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionOutcome<T> {
    pub probability: T,
    /// Futures of the scene's objects, in `object_indices` order.
    pub object_futures: Vec<Trajectory<T>>,
}

/// Ego plan candidates, optionally with simulated object reactions.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanCandidateSet<T> {
    plans: Vec<Trajectory<T>>,
    labels: Vec<PlanLabel>,
    /// Per plan; empty until reactions are simulated.
    outcomes: Vec<Vec<ReactionOutcome<T>>>,
}

impl<T: Scalar> PlanCandidateSet<T> {
    pub fn new(plans: Vec<Trajectory<T>>, labels: Vec<PlanLabel>) -> Result<Self> {
        if plans.len() < 2 || plans.len() != labels.len() {
            return Err(TaskError::InvalidCandidates(format!(
                "{} plans with {} labels",
                plans.len(),
                labels.len()
            )));
        }
        let t_f = plans[0].len();
        if plans.iter().any(|p| p.len() != t_f) {
            return Err(TaskError::InvalidCandidates("plans differ in length".into()));
        }
        let outcomes = vec![Vec::new(); plans.len()];
        Ok(Self {
            plans,
            labels,
            outcomes,
        })
    }

    /// Attaches simulated reactions, one outcome list per plan.
    pub fn with_outcomes(mut self, outcomes: Vec<Vec<ReactionOutcome<T>>>) -> Result<Self> {
        if outcomes.len() != self.plans.len() {
            return Err(TaskError::InvalidCandidates(format!(
                "{} outcome lists for {} plans",
                outcomes.len(),
                self.plans.len()
            )));
        }
        let t_f = self.t_future();
        for list in &outcomes {
            let total: T = list.iter().map(|o| o.probability).sum();
            if list.is_empty() || (total - T::one()).abs() > T::lit(1e-9) {
                return Err(TaskError::InvalidCandidates(format!(
                    "outcome probabilities sum to {total}"
                )));
            }
            if list.iter().any(|o| o.object_futures.iter().any(|f| f.len() != t_f)) {
                return Err(TaskError::InvalidCandidates("object future horizon".into()));
            }
        }
        self.outcomes = outcomes;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    pub fn t_future(&self) -> usize {
        self.plans[0].len()
    }

    pub fn plans(&self) -> &[Trajectory<T>] {
        &self.plans
    }

    pub fn plan(&self, m: usize) -> &Trajectory<T> {
        &self.plans[m]
    }

    pub fn labels(&self) -> &[PlanLabel] {
        &self.labels
    }

    pub fn outcomes(&self, m: usize) -> &[ReactionOutcome<T>] {
        &self.outcomes[m]
    }

    pub fn is_simulated(&self) -> bool {
        self.outcomes.iter().all(|o| !o.is_empty())
    }

    pub fn index_of(&self, label: PlanLabel) -> Option<usize> {
        self.labels.iter().position(|l| *l == label)
    }

    /// Probability-weighted path length of object `obj` (position within
    /// `object_indices`) reacting to plan `m`.
    pub fn expected_object_path_length(&self, m: usize, obj: usize) -> Result<T> {
        if self.outcomes[m].is_empty() {
            return Err(TaskError::MissingSimulatedFutures);
        }
        let mut total = T::zero();
        for o in &self.outcomes[m] {
            let f = o.object_futures.get(obj).ok_or(TaskError::NoObjects)?;
            total += o.probability * path_length(f);
        }
        Ok(total)
    }

    pub fn translated(&self, offset: crate::geometry::Point<T>) -> Self {
        Self {
            plans: self.plans.iter().map(|p| p.translated(offset)).collect(),
            labels: self.labels.clone(),
            outcomes: self
                .outcomes
                .iter()
                .map(|list| {
                    list.iter()
                        .map(|o| ReactionOutcome {
                            probability: o.probability,
                            object_futures: o.object_futures.iter().map(|f| f.translated(offset)).collect(),
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// A chosen decision with the utility of every candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision<T> {
    pub index: usize,
    pub utilities: Vec<T>,
}

impl<T: Scalar> Decision<T> {
    /// Argmax of `utilities`, ties to the lowest index.
    pub fn from_utilities(utilities: Vec<T>) -> Self {
        let mut index = 0;
        for (i, u) in utilities.iter().enumerate() {
            if *u > utilities[index] {
                index = i;
            }
        }
        Self { index, utilities }
    }
}

/// Index of the warn decision; "don't warn" is 1.
pub const WARN: usize = 0;

pub fn u_efficiency<T: Scalar>(plan: &Trajectory<T>) -> T {
    path_length(plan)
}

/// Expected closest distance between the plan and the object's samples,
/// capped at `d_safe`.
pub fn u_safety<T: Scalar>(
    plan: &Trajectory<T>,
    preds: &PredictionSampleSet<T>,
    object_index: usize,
    d_safe: f64,
) -> Result<T> {
    if plan.len() != preds.t_future() {
        return Err(TaskError::HorizonMismatch {
            plan: plan.len(),
            preds: preds.t_future(),
        });
    }
    if object_index >= preds.n_agents() {
        return Err(TaskError::NoObjects);
    }
    let mut expected = T::zero();
    for k in 0..preds.k() {
        let (d, _) = min_pairwise_distance(plan, preds.agent(k, object_index))?;
        expected += preds.weights()[k] * d;
    }
    Ok(expected.min(T::lit(d_safe)))
}

pub fn u_planning<T: Scalar>(
    plan: &Trajectory<T>,
    preds: &PredictionSampleSet<T>,
    object_index: usize,
    spec: &TaskSpec,
) -> Result<T> {
    Ok(u_efficiency(plan) + T::lit(spec.beta) * u_safety(plan, preds, object_index, spec.d_safe)?)
}

pub fn u_planning_altruistic<T: Scalar>(
    plan: &Trajectory<T>,
    simulated_object_future: &Trajectory<T>,
    preds: &PredictionSampleSet<T>,
    object_index: usize,
    spec: &TaskSpec,
) -> Result<T> {
    Ok(path_length(simulated_object_future)
        + T::lit(spec.beta) * u_safety(plan, preds, object_index, spec.d_safe)?)
}

/// Closest ego-object distance in a joint sample, infinite when the two
/// never share a valid step.
fn closest<T: Scalar>(joint: &[Trajectory<T>], ego: usize, object: usize) -> Result<T> {
    let (e, o) = (
        joint.get(ego).ok_or(TaskError::NoObjects)?,
        joint.get(object).ok_or(TaskError::NoObjects)?,
    );
    match min_pairwise_distance(e, o) {
        Ok((d, _)) => Ok(d),
        Err(GeometryError::NoOverlap) => Ok(T::infinity()),
        Err(e) => Err(e.into()),
    }
}

/// True when any object comes closer to the ego than `d_warn`.
pub fn collision_score_hard<T: Scalar>(
    joint: &[Trajectory<T>],
    ego_index: usize,
    object_indices: &[usize],
    d_warn: f64,
) -> Result<bool> {
    if object_indices.is_empty() {
        return Err(TaskError::NoObjects);
    }
    for &j in object_indices {
        if closest(joint, ego_index, j)? < T::lit(d_warn) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// `sigmoid(d_warn - closest distance)`, maximised over objects.
pub fn collision_score_soft<T: Scalar>(
    joint: &[Trajectory<T>],
    ego_index: usize,
    object_indices: &[usize],
    d_warn: f64,
) -> Result<T> {
    if object_indices.is_empty() {
        return Err(TaskError::NoObjects);
    }
    let mut best = T::zero();
    for &j in object_indices {
        let d = closest(joint, ego_index, j)?;
        best = best.max(crate::autodiff::sigmoid(T::lit(d_warn) - d));
    }
    Ok(best)
}

/// `(u_warn, 1 - u_warn)` where `u_warn` is the expected collision score.
pub fn warning_utilities<T: Scalar>(
    preds: &PredictionSampleSet<T>,
    ego_index: usize,
    object_indices: &[usize],
    spec: &TaskSpec,
    soft: bool,
) -> Result<(T, T)> {
    let mut u = T::zero();
    for k in 0..preds.k() {
        let joint = preds.sample(k);
        let r = if soft {
            collision_score_soft(joint, ego_index, object_indices, spec.d_warn)?
        } else if collision_score_hard(joint, ego_index, object_indices, spec.d_warn)? {
            T::one()
        } else {
            T::zero()
        };
        u += preds.weights()[k] * r;
    }
    Ok((u, T::one() - u))
}

/// Utility of every plan candidate under per-plan predictions (one sample
/// set conditioned on each plan). Altruistic efficiency uses the expected
/// simulated path length of the first object.
pub fn planning_utilities<T: Scalar>(
    candidates: &PlanCandidateSet<T>,
    preds_per_plan: &[PredictionSampleSet<T>],
    object_index: usize,
    spec: &TaskSpec,
) -> Result<Vec<T>> {
    if preds_per_plan.len() != candidates.len() {
        return Err(TaskError::InvalidCandidates(format!(
            "{} prediction sets for {} plans",
            preds_per_plan.len(),
            candidates.len()
        )));
    }
    let beta = T::lit(spec.beta);
    (0..candidates.len())
        .map(|m| {
            let plan = candidates.plan(m);
            let eff = match spec.kind {
                TaskKind::PlanningAltruistic => candidates.expected_object_path_length(m, 0)?,
                _ => u_efficiency(plan),
            };
            Ok(eff + beta * u_safety(plan, &preds_per_plan[m], object_index, spec.d_safe)?)
        })
        .collect()
}

/// Optimal decision under ground-truth futures.
///
/// Warning: hard near-collision check on the scene's futures, utilities
/// `(1, 0)` when it fires and `(0, 1)` otherwise. Planning: each plan is
/// scored against every simulated reaction of the first object, weighted
/// by the reaction probabilities.
pub fn ground_truth_decision<T: Scalar>(
    scene: &Scene<T>,
    spec: &TaskSpec,
    candidates: Option<&PlanCandidateSet<T>>,
) -> Result<Decision<T>> {
    if scene.object_indices.is_empty() {
        return Err(TaskError::NoObjects);
    }
    if spec.kind == TaskKind::Warning {
        let warn = collision_score_hard(&scene.future, scene.ego_index, &scene.object_indices, spec.d_warn)?;
        let u = if warn { T::one() } else { T::zero() };
        return Ok(Decision::from_utilities(vec![u, T::one() - u]));
    }
    let candidates = candidates.ok_or(TaskError::MissingSimulatedFutures)?;
    if !candidates.is_simulated() {
        return Err(TaskError::MissingSimulatedFutures);
    }
    let beta = T::lit(spec.beta);
    let cap = T::lit(spec.d_safe);
    let mut utilities = Vec::with_capacity(candidates.len());
    for m in 0..candidates.len() {
        let plan = candidates.plan(m);
        let mut u = T::zero();
        for o in candidates.outcomes(m) {
            let obj = o.object_futures.first().ok_or(TaskError::NoObjects)?;
            let d = match min_pairwise_distance(plan, obj) {
                Ok((d, _)) => d,
                Err(GeometryError::NoOverlap) => T::infinity(),
                Err(e) => return Err(e.into()),
            };
            let eff = match spec.kind {
                TaskKind::PlanningAltruistic => path_length(obj),
                _ => u_efficiency(plan),
            };
            u += o.probability * (eff + beta * d.min(cap));
        }
        utilities.push(u);
    }
    Ok(Decision::from_utilities(utilities))
}

/// Differentiable planning utilities for decoded rows laid out plan-major
/// within each scene: row `rows[s*M + m]` holds the predictions conditioned
/// on `plans[s*M + m]`. `efficiency` gives the constant first term per row
/// and `object_agent` the predicted agent scored for safety per row.
/// Returns utilities of shape `[S, M]`.
#[allow(clippy::too_many_arguments)]
pub fn planning_utilities_tape<T: Scalar>(
    tape: &mut Tape<T>,
    decoded: &Decoded,
    cfg: &ModelConfig,
    rows: &[usize],
    plans: &[&Trajectory<T>],
    efficiency: &[T],
    object_agent: &[usize],
    m: usize,
    spec: &TaskSpec,
) -> Result<NodeId> {
    let r = rows.len();
    if plans.len() != r || efficiency.len() != r || object_agent.len() != r || m == 0 || !r.is_multiple_of(m) {
        return Err(TaskError::InvalidCandidates(format!(
            "{r} rows, {} plans, {} efficiencies, {} objects, {m} per scene",
            plans.len(),
            efficiency.len(),
            object_agent.len()
        )));
    }
    let (k_count, t_f) = (cfg.k_samples, cfg.t_future);
    let p = cfg.position_outputs();
    let mut idx = Vec::with_capacity(r * k_count * t_f * 2);
    let mut targets = Vec::with_capacity(r * k_count * t_f * 2);
    let mut weight_idx = Vec::with_capacity(r * k_count);
    for i in 0..r {
        let plan = plans[i];
        if plan.len() != t_f {
            return Err(TaskError::HorizonMismatch {
                plan: plan.len(),
                preds: t_f,
            });
        }
        if object_agent[i] >= cfg.n_agents {
            return Err(TaskError::NoObjects);
        }
        for k in 0..k_count {
            for t in 0..t_f {
                let q = plan.points()[t];
                idx.push(rows[i] * p + cfg.position_index(k, object_agent[i], t, 0));
                idx.push(rows[i] * p + cfg.position_index(k, object_agent[i], t, 1));
                targets.extend([q.x, q.y]);
            }
            weight_idx.push(rows[i] * k_count + k);
        }
    }
    let n = r * k_count * t_f;
    let obj = tape.gather(decoded.positions, idx, vec![n, 2])?;
    let plan_pts = tape.constant(Tensor::new(vec![n, 2], targets)?);
    let diff = tape.sub(obj, plan_pts)?;
    let dist = tape.norm_last(diff);
    let dist = tape.reshape(dist, vec![r * k_count, t_f])?;
    let closest = tape.min_last(dist);
    let closest = tape.reshape(closest, vec![r, k_count])?;
    let w = tape.gather(decoded.weights, weight_idx, vec![r, k_count])?;
    let weighted = tape.mul(closest, w)?;
    let expected = tape.sum_last(weighted);
    let cap = tape.constant(Tensor::full(&[r, 1], T::lit(spec.d_safe)));
    let pair = tape.concat(&[expected, cap])?;
    let safety = tape.min_last(pair);
    let safety = tape.scale(safety, T::lit(spec.beta));
    let eff = tape.constant(Tensor::new(vec![r, 1], efficiency.to_vec())?);
    let u = tape.add(safety, eff)?;
    Ok(tape.reshape(u, vec![r / m, m])?)
}

/// Differentiable soft warning utilities `[u_warn, 1 - u_warn]` per decoded
/// row, shape `[B, 2]`.
pub fn warning_utilities_tape<T: Scalar>(
    tape: &mut Tape<T>,
    decoded: &Decoded,
    cfg: &ModelConfig,
    rows: &[usize],
    ego: &[usize],
    objects: &[&[usize]],
    spec: &TaskSpec,
) -> Result<NodeId> {
    let b = rows.len();
    if ego.len() != b || objects.len() != b || b == 0 {
        return Err(TaskError::InvalidCandidates(format!(
            "{b} rows, {} egos, {} object lists",
            ego.len(),
            objects.len()
        )));
    }
    // Rows with fewer objects repeat their first one; the max is unchanged.
    let j_max = objects.iter().map(|o| o.len()).max().unwrap_or(0);
    if objects.iter().any(|o| o.is_empty()) {
        return Err(TaskError::NoObjects);
    }
    let (k_count, t_f) = (cfg.k_samples, cfg.t_future);
    let p = cfg.position_outputs();
    let n = b * k_count * j_max * t_f;
    let mut ego_idx = Vec::with_capacity(n * 2);
    let mut obj_idx = Vec::with_capacity(n * 2);
    let mut weight_idx = Vec::with_capacity(b * k_count);
    for i in 0..b {
        if ego[i] >= cfg.n_agents || objects[i].iter().any(|j| *j >= cfg.n_agents) {
            return Err(TaskError::NoObjects);
        }
        let base = rows[i] * p;
        for k in 0..k_count {
            for jj in 0..j_max {
                let j = objects[i].get(jj).copied().unwrap_or(objects[i][0]);
                for t in 0..t_f {
                    for c in 0..2 {
                        ego_idx.push(base + cfg.position_index(k, ego[i], t, c));
                        obj_idx.push(base + cfg.position_index(k, j, t, c));
                    }
                }
            }
            weight_idx.push(rows[i] * k_count + k);
        }
    }
    let e = tape.gather(decoded.positions, ego_idx, vec![n, 2])?;
    let o = tape.gather(decoded.positions, obj_idx, vec![n, 2])?;
    let diff = tape.sub(e, o)?;
    let dist = tape.norm_last(diff);
    let dist = tape.reshape(dist, vec![b * k_count * j_max, t_f])?;
    let closest = tape.min_last(dist);
    let margin = tape.neg(closest);
    let margin = tape.add_scalar(margin, T::lit(spec.d_warn));
    let score = tape.sigmoid(margin);
    let score = tape.reshape(score, vec![b * k_count, j_max])?;
    let score = tape.max_last(score);
    let score = tape.reshape(score, vec![b, k_count])?;
    let w = tape.gather(decoded.weights, weight_idx, vec![b, k_count])?;
    let weighted = tape.mul(score, w)?;
    let u_warn = tape.sum_last(weighted);
    let neg = tape.neg(u_warn);
    let u_not = tape.add_scalar(neg, T::one());
    Ok(tape.concat(&[u_warn, u_not])?)
}
