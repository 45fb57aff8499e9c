use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{Point, Polyline, Relation, Scene, Trajectory};

use super::{ConflictGeometry, GeneratorConfig, Result, SimgenError};

const MAX_ATTEMPTS: usize = 100;
const PATH_HALF_LENGTH: f64 = 400.0;
const LANE_OFFSET: f64 = 3.5;

fn arc(center: Point<f64>, radius: f64, from: f64, to: f64, out: &mut Vec<Point<f64>>) {
    let steps = ((to - from).abs() / (1.0f64).to_radians()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let a = from + (to - from) * i as f64 / steps as f64;
        out.push(Point::new(center.x + radius * a.cos(), center.y + radius * a.sin()));
    }
}

/// The object's path for a geometry; the ego drives along the x axis. The
/// index of a vertex placed exactly on the conflict point is returned when
/// the paths touch rather than cross.
fn object_path<R: Rng + ?Sized>(rng: &mut R, geometry: ConflictGeometry) -> (Vec<Point<f64>>, Option<usize>) {
    let mirror = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let l = PATH_HALF_LENGTH;
    let mut v = Vec::new();
    match geometry {
        ConflictGeometry::Crossing => {
            let theta = (90.0 + rng.random_range(-20.0..20.0f64)).to_radians();
            let d = Point::new(theta.cos(), mirror * theta.sin());
            v.push(d * -l);
            v.push(Point::zero());
            v.push(d * l);
            return (v, Some(1));
        }
        ConflictGeometry::Merging => {
            // Straight approach at angle phi, then a clockwise arc that
            // becomes tangent to the ego lane at the origin.
            let phi = rng.random_range(20.0..40.0f64).to_radians();
            let r = 30.0;
            let start = Point::new(-r * phi.sin(), -r + r * phi.cos());
            let heading = Point::new(phi.cos(), phi.sin());
            v.push(start - heading * l);
            let center = Point::new(0.0, -r);
            arc(center, r, PI / 2.0 + phi, PI / 2.0, &mut v);
            let conflict = v.len() - 1;
            v[conflict] = Point::zero();
            v.push(Point::new(l, 0.0));
            for p in &mut v {
                p.y *= mirror;
            }
            return (v, Some(conflict));
        }
        ConflictGeometry::Oncoming => {
            // Opposite lane heading -x, left turn across the ego lane.
            let r = rng.random_range(8.0..15.0);
            v.push(Point::new(r + l, LANE_OFFSET));
            let center = Point::new(r, LANE_OFFSET - r);
            arc(center, r, PI / 2.0, PI, &mut v);
            v.push(Point::new(0.0, LANE_OFFSET - r - l));
        }
    }
    (v, None)
}

/// Constant-speed motion along `path`, at arc length `s_now` at the present.
fn track(path: &Polyline<f64>, s_now: f64, v: f64, cfg: &GeneratorConfig) -> Result<(Trajectory, Trajectory)> {
    let at = |i: isize| path.point_at(s_now + v * i as f64 * cfg.dt);
    let t_past = cfg.t_past as isize;
    let past = (1 - t_past..=0).map(at).collect();
    let future = (1..=cfg.t_future as isize).map(at).collect();
    Ok((
        Trajectory::new(past, vec![true; cfg.t_past], cfg.dt)?,
        Trajectory::new(future, vec![true; cfg.t_future], cfg.dt)?,
    ))
}

/// One interacting scene: the ego (index 0) and `n_objects` objects, the
/// first of which reaches the conflict point `gap` seconds after the ego.
/// Later arrival means yielding. Draws are retried when the first object
/// would not reach the conflict point within the future horizon.
pub fn generate_scene<R: Rng + ?Sized>(rng: &mut R, cfg: &GeneratorConfig, id: String) -> Result<Scene> {
    cfg.validate()?;
    let horizon = cfg.t_future as f64 * cfg.dt;
    let ego_path = Polyline::new(vec![Point::new(-PATH_HALF_LENGTH, 0.0), Point::new(PATH_HALF_LENGTH, 0.0)])?;
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| SimgenError::InvalidConfig(e.to_string()))?;
    for _ in 0..MAX_ATTEMPTS {
        let (vertices, touch) = object_path(rng, cfg.geometry);
        let obj_path = Polyline::new(vertices)?;
        let conflict = match touch {
            Some(i) => Some((obj_path.cumulative()[i], PATH_HALF_LENGTH)),
            None => obj_path.intersection(&ego_path).map(|(s_o, s_e, _)| (s_o, s_e)),
        };
        let Some((s_c_obj, s_c_ego)) = conflict else {
            continue;
        };
        let (v_lo, v_hi) = cfg.speed_range;
        let v_ego = rng.random_range(v_lo..=v_hi);
        let v_obj = rng.random_range(v_lo..=v_hi);
        let t_ego = rng.random_range(0.3 * horizon..=0.7 * horizon);
        let (g_lo, g_hi) = cfg.arrival_gap_range;
        let gap = rng.random_range(g_lo..=g_hi);
        let t_obj = t_ego + gap;
        if !(0.0..=horizon).contains(&t_obj) {
            continue;
        }
        let relation = if gap > 0.0 {
            Relation::ObjectYieldsEgo
        } else {
            Relation::EgoYieldsObject
        };
        let (mut past, mut future) = (Vec::new(), Vec::new());
        let (p, f) = track(&ego_path, s_c_ego - v_ego * t_ego, v_ego, cfg)?;
        past.push(p);
        future.push(f);
        let mut s_obj = s_c_obj - v_obj * t_obj;
        for j in 0..cfg.n_objects {
            if j > 0 {
                s_obj -= v_obj * rng.random_range(1.5..3.0);
            }
            let (p, f) = track(&obj_path, s_obj, v_obj, cfg)?;
            past.push(p);
            future.push(f);
        }
        let offset = Point::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
        let mut noisy = Vec::with_capacity(past.len());
        for t in past {
            let pts = t
                .points()
                .iter()
                .map(|q| Point::new(q.x + noise.sample(rng), q.y + noise.sample(rng)))
                .collect();
            noisy.push(Trajectory::new(pts, t.valid().to_vec(), t.dt())?);
        }
        let past = noisy;
        let scene = Scene::new(id, past, future, 0, (1..=cfg.n_objects).collect(), relation)?;
        return Ok(scene.translated(offset));
    }
    Err(SimgenError::DegenerateGeometry(MAX_ATTEMPTS))
}
