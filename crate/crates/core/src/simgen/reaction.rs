use rand::Rng;

use crate::geometry::{Point, Polyline, Relation, Scene, Trajectory};
use crate::tasks::{PlanCandidateSet, PlanLabel, ReactionOutcome};

use super::plans::{rescale_progress, MotionLimits};
use super::Result;

/// When the object interacts with the ego as `relation` and the ego drives
/// `trigger_plan`, the object rescales its progress by one of the outcome
/// factors with the paired probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionRule {
    pub relation: Relation,
    pub trigger_plan: PlanLabel,
    /// `(progress factor, probability)`
    pub outcomes: Vec<(f64, f64)>,
}

impl ReactionRule {
    /// A yielding object facing a hesitant ego either speeds up to pass or
    /// keeps yielding; a leading object facing a pushy ego either yields or
    /// speeds up to keep the lead.
    pub fn defaults() -> Vec<ReactionRule> {
        vec![
            ReactionRule {
                relation: Relation::ObjectYieldsEgo,
                trigger_plan: PlanLabel::Conservative,
                outcomes: vec![(1.2, 0.5), (0.8, 0.5)],
            },
            ReactionRule {
                relation: Relation::EgoYieldsObject,
                trigger_plan: PlanLabel::Aggressive,
                outcomes: vec![(0.8, 0.5), (1.2, 0.5)],
            },
        ]
    }

    fn find(relation: Relation, plan: PlanLabel) -> Option<ReactionRule> {
        Self::defaults()
            .into_iter()
            .find(|r| r.relation == relation && r.trigger_plan == plan)
    }
}

/// Every possible heuristic reaction with its probability. Without a
/// matching rule the object keeps its future (a single certain outcome).
pub fn reaction_outcomes(
    plan_label: PlanLabel,
    object_future: &Trajectory,
    relation: Relation,
    limits: &MotionLimits,
) -> Result<Vec<(f64, Trajectory)>> {
    match ReactionRule::find(relation, plan_label) {
        Some(rule) => rule
            .outcomes
            .iter()
            .map(|(factor, p)| Ok((*p, rescale_progress(object_future, *factor, limits)?)))
            .collect(),
        None => Ok(vec![(1.0, object_future.clone())]),
    }
}

/// One sampled heuristic reaction. Consumes randomness only when a rule
/// applies.
pub fn simulate_reaction_heuristic<R: Rng + ?Sized>(
    plan_label: PlanLabel,
    object_future: &Trajectory,
    relation: Relation,
    limits: &MotionLimits,
    rng: &mut R,
) -> Result<Trajectory> {
    match ReactionRule::find(relation, plan_label) {
        Some(rule) => {
            let factor = sample_factor(&rule, rng);
            rescale_progress(object_future, factor, limits)
        }
        None => Ok(object_future.clone()),
    }
}

fn sample_factor<R: Rng + ?Sized>(rule: &ReactionRule, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (factor, p) in &rule.outcomes {
        acc += p;
        if u < acc {
            return *factor;
        }
    }
    rule.outcomes.last().expect("rule has outcomes").0
}

/// Intelligent Driver Model constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmParams {
    /// Desired speed; `None` uses the object's initial speed.
    pub v0: Option<f64>,
    /// Time headway, s.
    pub time_headway: f64,
    /// Maximum acceleration, m/s².
    pub a_max: f64,
    /// Comfortable deceleration, m/s².
    pub b_comf: f64,
    /// Standstill gap, m.
    pub s0: f64,
    pub delta: f64,
    /// Radius around the conflict point the ego occupies, m.
    pub conflict_radius: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: None,
            time_headway: 1.5,
            a_max: 1.4,
            b_comf: 2.0,
            s0: 2.0,
            delta: 4.0,
            conflict_radius: 2.0,
        }
    }
}

const PATH_EXTENSION: f64 = 500.0;

/// Polyline through the valid points, continued straight for a long way
/// past the last one.
fn extended_path(traj: &Trajectory) -> Result<Polyline<f64>> {
    let base = Polyline::from_trajectory(traj)?;
    let mut vertices = base.vertices().to_vec();
    if base.length() > 0.0 {
        vertices.push(base.point_at(base.length() + PATH_EXTENSION));
    }
    Ok(Polyline::new(vertices)?)
}

/// Conflict point on the object's path: where the ego's path crosses it,
/// or, for an ego that does not move, the closest point of the object's
/// path if within the conflict radius. Returns `(object arc length, point)`.
fn conflict_point(plan: &Trajectory, obj_path: &Polyline<f64>, radius: f64) -> Result<Option<(f64, Point<f64>)>> {
    let ego_path = extended_path(plan)?;
    if ego_path.length() > 0.0 {
        return Ok(obj_path.intersection(&ego_path).map(|(s_o, _, c)| (s_o, c)));
    }
    let ego = ego_path.vertices()[0];
    let step = 0.05;
    let n = (obj_path.length() / step).ceil() as usize;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..=n {
        let s = i as f64 * step;
        let d = obj_path.point_at(s).distance(ego);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((s, d));
        }
    }
    Ok(best
        .filter(|(_, d)| *d <= radius)
        .map(|(s, _)| (s, obj_path.point_at(s))))
}

/// Longitudinal IDM rollout of the object along its own path.
///
/// The ego has priority when it reaches the conflict region no later than
/// the object would at its desired speed; until the ego leaves the region
/// again, the object then treats the region's near edge as a stopped
/// leader. Otherwise the road is free.
pub fn simulate_reaction_idm(plan: &Trajectory, object_future: &Trajectory, params: &IdmParams) -> Result<Trajectory> {
    let dt = object_future.dt();
    let path = extended_path(object_future)?;
    let pts: Vec<_> = object_future.iter_valid().map(|(_, p)| p).collect();
    let v_init = if pts.len() >= 2 { pts[1].distance(pts[0]) / dt } else { 0.0 };
    let v0 = params.v0.unwrap_or(v_init).max(0.1);

    let r = params.conflict_radius;
    let obstacle: Option<(f64, usize, usize)> = match conflict_point(plan, &path, r)? {
        None => None,
        Some((s_c, c)) => {
            let occupied: Vec<bool> = (0..plan.len())
                .map(|t| plan.get(t).is_some_and(|p| p.distance(c) <= r))
                .collect();
            match occupied.iter().position(|o| *o) {
                None => None,
                Some(enter) => {
                    let object_enter = (s_c - r).max(0.0) / v0;
                    let exit = (enter..occupied.len())
                        .find(|t| !occupied[*t])
                        .unwrap_or(usize::MAX);
                    (enter as f64 * plan.dt() <= object_enter).then_some((s_c - r, enter, exit))
                }
            }
        }
    };

    let sqrt_ab = (params.a_max * params.b_comf).sqrt();
    let (mut s, mut v) = (0.0f64, v_init);
    let mut points = Vec::with_capacity(object_future.len());
    points.push(path.point_at(0.0));
    for t in 1..object_future.len() {
        let free = 1.0 - (v / v0).powf(params.delta);
        let acc = match obstacle {
            Some((s_obs, _, exit)) if t - 1 < exit => {
                let gap = s_obs - s;
                if gap <= 0.0 {
                    -f64::MAX
                } else {
                    let s_star = params.s0 + (v * params.time_headway + v * v / (2.0 * sqrt_ab)).max(0.0);
                    params.a_max * (free - (s_star / gap).powi(2))
                }
            }
            _ => params.a_max * free,
        };
        let v_next = v + acc * dt;
        if v_next < 0.0 {
            // Stops within the step.
            if acc.is_finite() && acc < 0.0 && acc > -f64::MAX {
                s += -v * v / (2.0 * acc);
            }
            v = 0.0;
        } else {
            s += 0.5 * (v + v_next) * dt;
            v = v_next;
        }
        points.push(path.point_at(s));
    }
    Ok(Trajectory::new(points, vec![true; object_future.len()], dt)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReactionModel {
    Heuristic,
    Idm(IdmParams),
}

/// How heuristic outcomes enter the ground truth: all of them with their
/// probabilities, or one sampled outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReactionMode {
    Expected,
    Sample,
}

/// Attaches simulated object reactions to every candidate. Heuristic
/// outcomes move all objects with the same factor.
pub fn simulate_candidates<R: Rng + ?Sized>(
    scene: &Scene,
    candidates: PlanCandidateSet<f64>,
    model: &ReactionModel,
    mode: ReactionMode,
    limits: &MotionLimits,
    rng: &mut R,
) -> Result<PlanCandidateSet<f64>> {
    let objects: Vec<&Trajectory> = scene.object_indices.iter().map(|i| &scene.future[*i]).collect();
    let mut all = Vec::with_capacity(candidates.len());
    for m in 0..candidates.len() {
        let label = candidates.labels()[m];
        let outcomes = match model {
            ReactionModel::Idm(params) => vec![ReactionOutcome {
                probability: 1.0,
                object_futures: objects
                    .iter()
                    .map(|f| simulate_reaction_idm(candidates.plan(m), f, params))
                    .collect::<Result<_>>()?,
            }],
            ReactionModel::Heuristic => match ReactionRule::find(scene.relation, label) {
                None => vec![ReactionOutcome {
                    probability: 1.0,
                    object_futures: objects.iter().map(|f| (*f).clone()).collect(),
                }],
                Some(rule) => {
                    let chosen: Vec<(f64, f64)> = match mode {
                        ReactionMode::Expected => rule.outcomes.clone(),
                        ReactionMode::Sample => vec![(sample_factor(&rule, rng), 1.0)],
                    };
                    chosen
                        .iter()
                        .map(|(factor, p)| {
                            Ok(ReactionOutcome {
                                probability: *p,
                                object_futures: objects
                                    .iter()
                                    .map(|f| rescale_progress(f, *factor, limits))
                                    .collect::<Result<_>>()?,
                            })
                        })
                        .collect::<Result<_>>()?
                }
            },
        };
        all.push(outcomes);
    }
    Ok(candidates.with_outcomes(all)?)
}
