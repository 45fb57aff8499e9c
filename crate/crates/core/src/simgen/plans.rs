use crate::geometry::{Polyline, Trajectory};
use crate::tasks::{PlanCandidateSet, PlanLabel};

use super::{Result, SimgenError};

/// Longitudinal limits applied to plans and rescaled reactions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionLimits {
    /// m/s
    pub v_max: f64,
    /// m/s²
    pub a_max: f64,
}

impl Default for MotionLimits {
    fn default() -> Self {
        Self {
            v_max: 30.0,
            a_max: 3.0,
        }
    }
}

impl MotionLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_max > 0.0 && self.a_max > 0.0 && self.v_max.is_finite() && self.a_max.is_finite()) {
            return Err(SimgenError::InvalidConfig(format!(
                "limits v_max {} a_max {}",
                self.v_max, self.a_max
            )));
        }
        Ok(())
    }
}

/// Finite-difference speeds `|p_t - p_{t-1}| / dt` and accelerations
/// (differences of consecutive speeds over `dt`) of the valid run of steps.
pub fn speed_profile(traj: &Trajectory) -> (Vec<f64>, Vec<f64>) {
    let dt = traj.dt();
    let pts: Vec<_> = traj.iter_valid().map(|(_, p)| p).collect();
    let speeds: Vec<f64> = pts.windows(2).map(|w| w[1].distance(w[0]) / dt).collect();
    let accels = speeds.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    (speeds, accels)
}

/// Moves along the path of `traj` with arc-length progress (measured from
/// its first valid point) multiplied by `factor`, then limited so that the
/// speed stays in `[0, v_max]` and consecutive speeds differ by at most
/// `a_max · dt`. The speed of the first step is free. When no limit binds,
/// the progress is exactly `factor` times the original, so `factor = 1`
/// reproduces `traj`. Invalid steps hold the previous progress; the output
/// is valid everywhere.
pub fn rescale_progress(traj: &Trajectory, factor: f64, limits: &MotionLimits) -> Result<Trajectory> {
    let path = Polyline::from_trajectory(traj)?;
    let dt = traj.dt();
    let cum = path.cumulative();
    let mut progress = Vec::with_capacity(traj.len());
    let mut vi = 0usize;
    let mut s = 0.0;
    for t in 0..traj.len() {
        if traj.is_valid(t) {
            s = cum[vi];
            vi += 1;
        }
        progress.push(s);
    }
    let target: Vec<f64> = progress.iter().map(|s| factor * s).collect();

    let dv = limits.a_max * dt;
    let mut clipped = false;
    let mut limited = vec![0.0; target.len()];
    let mut prev_v: Option<f64> = None;
    for t in 1..target.len() {
        let want = (target[t] - target[t - 1]) / dt;
        let mut v = match prev_v {
            Some(p) => want.clamp(p - dv, p + dv),
            None => want,
        };
        v = v.clamp(0.0, limits.v_max);
        if v != want {
            clipped = true;
        }
        limited[t] = limited[t - 1] + v * dt;
        prev_v = Some(v);
    }
    let final_progress = if clipped { limited } else { target };
    let points = final_progress.iter().map(|s| path.point_at(*s)).collect();
    Ok(Trajectory::new(points, vec![true; traj.len()], dt)?)
}

/// Conservative, normal and aggressive plans (progress × 0.8, 1.0, 1.2)
/// along the observed ego future.
pub fn generate_plan_candidates(ego_future: &Trajectory, limits: &MotionLimits) -> Result<PlanCandidateSet<f64>> {
    let plans = PlanLabel::ALL
        .iter()
        .map(|l| rescale_progress(ego_future, l.factor(), limits))
        .collect::<Result<Vec<_>>>()?;
    Ok(PlanCandidateSet::new(plans, PlanLabel::ALL.to_vec())?)
}
