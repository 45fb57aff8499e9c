//! Trajectory containers, scene normalization and point-distance geometry.
//!
//! Every geometric routine honours the per-step validity mask carried by
//! [`Trajectory`]: invalid points are never read.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use thiserror::Error;

use crate::Scalar;

/// Sampling period of every trajectory in seconds.
pub const DEFAULT_DT: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("trajectory must hold at least one point")]
    EmptyTrajectory,
    #[error("points ({points}) and validity mask ({mask}) differ in length")]
    MaskLength { points: usize, mask: usize },
    #[error("trajectories differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no step is valid in both trajectories")]
    NoOverlap,
    #[error("no agent has a valid last observed position")]
    NoValidAgents,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> T {
        (self - other).norm()
    }

    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y
    }

    pub fn cast<U: Scalar>(self) -> Point<U> {
        Point::new(U::lit(self.x.as_f64()), U::lit(self.y.as_f64()))
    }
}

impl<T: Scalar> Add for Point<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl<T: Scalar> Sub for Point<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl<T: Scalar> Mul<T> for Point<T> {
    type Output = Self;
    fn mul(self, rhs: T) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

/// Positions sampled at a fixed period, with a validity flag per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T = f64> {
    points: Vec<Point<T>>,
    valid: Vec<bool>,
    dt: T,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(points: Vec<Point<T>>, valid: Vec<bool>, dt: T) -> Result<Self> {
        if points.is_empty() {
            return Err(GeometryError::EmptyTrajectory);
        }
        if points.len() != valid.len() {
            return Err(GeometryError::MaskLength {
                points: points.len(),
                mask: valid.len(),
            });
        }
        Ok(Self { points, valid, dt })
    }

    /// All-valid trajectory sampled at [`DEFAULT_DT`].
    pub fn from_points(points: Vec<Point<T>>) -> Result<Self> {
        let valid = vec![true; points.len()];
        Self::new(points, valid, T::lit(DEFAULT_DT))
    }

    /// All-valid trajectory from `(x, y)` pairs sampled at [`DEFAULT_DT`].
    pub fn from_xy(xy: &[(f64, f64)]) -> Result<Self> {
        Self::from_points(
            xy.iter()
                .map(|&(x, y)| Point::new(T::lit(x), T::lit(y)))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn points(&self) -> &[Point<T>] {
        &self.points
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, t: usize) -> bool {
        self.valid[t]
    }

    /// Point at step `t` if it is valid.
    pub fn get(&self, t: usize) -> Option<Point<T>> {
        self.valid[t].then(|| self.points[t])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// `(step, point)` pairs for valid steps only.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, Point<T>)> + '_ {
        self.points
            .iter()
            .zip(&self.valid)
            .enumerate()
            .filter_map(|(t, (p, v))| v.then_some((t, *p)))
    }

    pub fn last_valid(&self) -> Option<(usize, Point<T>)> {
        self.iter_valid().last()
    }

    /// Same trajectory shifted by `offset`; the mask is kept.
    pub fn translated(&self, offset: Point<T>) -> Self {
        Self {
            points: self.points.iter().map(|p| *p + offset).collect(),
            valid: self.valid.clone(),
            dt: self.dt,
        }
    }

    pub fn map_points(&self, f: impl Fn(Point<T>) -> Point<T>) -> Self {
        Self {
            points: self.points.iter().map(|p| f(*p)).collect(),
            valid: self.valid.clone(),
            dt: self.dt,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Trajectory<U> {
        Trajectory {
            points: self.points.iter().map(|p| p.cast()).collect(),
            valid: self.valid.clone(),
            dt: U::lit(self.dt.as_f64()),
        }
    }
}

/// Interaction label between the ego agent and the (first) object agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    ObjectYieldsEgo,
    EgoYieldsObject,
    None,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::ObjectYieldsEgo => "object_yields_ego",
            Relation::EgoYieldsObject => "ego_yields_object",
            Relation::None => "none",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "object_yields_ego" => Ok(Relation::ObjectYieldsEgo),
            "ego_yields_object" => Ok(Relation::EgoYieldsObject),
            "none" => Ok(Relation::None),
            other => Err(format!("unknown relation `{other}`")),
        }
    }
}

/// Observed past and ground-truth future of every agent in a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T = f64> {
    pub id: String,
    pub past: Vec<Trajectory<T>>,
    pub future: Vec<Trajectory<T>>,
    pub ego_index: usize,
    pub object_indices: Vec<usize>,
    pub relation: Relation,
}

impl<T: Scalar> Scene<T> {
    pub fn new(
        id: impl Into<String>,
        past: Vec<Trajectory<T>>,
        future: Vec<Trajectory<T>>,
        ego_index: usize,
        object_indices: Vec<usize>,
        relation: Relation,
    ) -> Result<Self> {
        let scene = Self {
            id: id.into(),
            past,
            future,
            ego_index,
            object_indices,
            relation,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GeometryError::InvalidScene(msg));
        let n = self.past.len();
        if n == 0 {
            return bad("scene has no agents".into());
        }
        if self.future.len() != n {
            return bad(format!("{} past vs {} future tracks", n, self.future.len()));
        }
        let t_p = self.past[0].len();
        if self.past.iter().any(|t| t.len() != t_p) {
            return bad("past trajectories differ in length".into());
        }
        let t_f = self.future[0].len();
        if self.future.iter().any(|t| t.len() != t_f) {
            return bad("future trajectories differ in length".into());
        }
        if self.ego_index >= n {
            return bad(format!("ego index {} out of range", self.ego_index));
        }
        for &o in &self.object_indices {
            if o >= n {
                return bad(format!("object index {o} out of range"));
            }
            if o == self.ego_index {
                return bad("ego listed as an object".into());
            }
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.past.len()
    }

    pub fn t_past(&self) -> usize {
        self.past[0].len()
    }

    pub fn t_future(&self) -> usize {
        self.future[0].len()
    }

    pub fn ego_past(&self) -> &Trajectory<T> {
        &self.past[self.ego_index]
    }

    pub fn ego_future(&self) -> &Trajectory<T> {
        &self.future[self.ego_index]
    }

    /// Future of the first listed object agent.
    pub fn object_future(&self) -> Option<&Trajectory<T>> {
        self.object_indices.first().map(|&i| &self.future[i])
    }

    /// Same scene with every position (past and future) shifted by `offset`.
    pub fn translated(&self, offset: Point<T>) -> Self {
        Self {
            id: self.id.clone(),
            past: self.past.iter().map(|t| t.translated(offset)).collect(),
            future: self.future.iter().map(|t| t.translated(offset)).collect(),
            ego_index: self.ego_index,
            object_indices: self.object_indices.clone(),
            relation: self.relation,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Scene<U> {
        Scene {
            id: self.id.clone(),
            past: self.past.iter().map(|t| t.cast()).collect(),
            future: self.future.iter().map(|t| t.cast()).collect(),
            ego_index: self.ego_index,
            object_indices: self.object_indices.clone(),
            relation: self.relation,
        }
    }
}

/// Translation applied by [`normalize_scene`]; `origin` is the mean of the
/// valid last-observed positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationFrame<T> {
    pub origin: Point<T>,
}

impl<T: Scalar> NormalizationFrame<T> {
    pub fn to_local(&self, p: Point<T>) -> Point<T> {
        p - self.origin
    }

    pub fn to_world(&self, p: Point<T>) -> Point<T> {
        p + self.origin
    }

    pub fn denormalize_scene(&self, scene: &Scene<T>) -> Scene<T> {
        scene.translated(self.origin)
    }

    pub fn trajectory_to_world(&self, traj: &Trajectory<T>) -> Trajectory<T> {
        traj.translated(self.origin)
    }

    pub fn trajectory_to_local(&self, traj: &Trajectory<T>) -> Trajectory<T> {
        traj.translated(Point::zero() - self.origin)
    }
}

/// Shifts the scene so the valid last-observed positions are centred on
/// the origin.
pub fn normalize_scene<T: Scalar>(scene: &Scene<T>) -> Result<(Scene<T>, NormalizationFrame<T>)> {
    let mut sum = Point::zero();
    let mut count = 0usize;
    for track in &scene.past {
        if let Some(p) = track.get(track.len() - 1) {
            sum = sum + p;
            count += 1;
        }
    }
    if count == 0 {
        return Err(GeometryError::NoValidAgents);
    }
    let origin = sum * (T::one() / T::from_usize_lossy(count));
    let frame = NormalizationFrame { origin };
    Ok((scene.translated(Point::zero() - origin), frame))
}

/// Minimum distance over jointly valid steps, with the earliest step that
/// attains it.
pub fn min_pairwise_distance<T: Scalar>(
    a: &Trajectory<T>,
    b: &Trajectory<T>,
) -> Result<(T, usize)> {
    if a.len() != b.len() {
        return Err(GeometryError::LengthMismatch(a.len(), b.len()));
    }
    let mut best: Option<(T, usize)> = None;
    for t in 0..a.len() {
        if let (Some(p), Some(q)) = (a.get(t), b.get(t)) {
            let d = p.distance(q);
            // strict comparison keeps the earliest step on ties
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, t));
            }
        }
    }
    best.ok_or(GeometryError::NoOverlap)
}

/// Sum of segment lengths between consecutive valid points.
pub fn path_length<T: Scalar>(traj: &Trajectory<T>) -> T {
    let mut total = T::zero();
    let mut prev: Option<Point<T>> = None;
    for (_, p) in traj.iter_valid() {
        if let Some(q) = prev {
            total += p.distance(q);
        }
        prev = Some(p);
    }
    total
}

/// Piecewise-linear path parameterised by arc length. Queries beyond the
/// last vertex continue along the final segment's direction.
#[derive(Debug, Clone)]
pub struct Polyline<T> {
    vertices: Vec<Point<T>>,
    cumulative: Vec<T>,
}

impl<T: Scalar> Polyline<T> {
    pub fn new(vertices: Vec<Point<T>>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(GeometryError::EmptyTrajectory);
        }
        let mut cumulative = Vec::with_capacity(vertices.len());
        let mut s = T::zero();
        cumulative.push(s);
        for w in vertices.windows(2) {
            s += w[1].distance(w[0]);
            cumulative.push(s);
        }
        Ok(Self {
            vertices,
            cumulative,
        })
    }

    /// Polyline through the valid points of a trajectory.
    pub fn from_trajectory(traj: &Trajectory<T>) -> Result<Self> {
        Self::new(traj.iter_valid().map(|(_, p)| p).collect())
    }

    pub fn length(&self) -> T {
        *self.cumulative.last().expect("nonempty")
    }

    pub fn vertices(&self) -> &[Point<T>] {
        &self.vertices
    }

    /// Arc length at each vertex.
    pub fn cumulative(&self) -> &[T] {
        &self.cumulative
    }

    /// Direction of the last segment with nonzero length, if any.
    fn tail_direction(&self) -> Option<Point<T>> {
        for i in (1..self.vertices.len()).rev() {
            let seg = self.cumulative[i] - self.cumulative[i - 1];
            if seg > T::zero() {
                return Some((self.vertices[i] - self.vertices[i - 1]) * (T::one() / seg));
            }
        }
        None
    }

    fn head_direction(&self) -> Option<Point<T>> {
        for i in 1..self.vertices.len() {
            let seg = self.cumulative[i] - self.cumulative[i - 1];
            if seg > T::zero() {
                return Some((self.vertices[i] - self.vertices[i - 1]) * (T::one() / seg));
            }
        }
        None
    }

    /// Point at arc length `s`. A query equal to a vertex's arc length
    /// returns that vertex exactly.
    pub fn point_at(&self, s: T) -> Point<T> {
        let n = self.vertices.len();
        let total = self.length();
        if s >= total {
            let last = self.vertices[n - 1];
            return match self.tail_direction() {
                Some(dir) if s > total => last + dir * (s - total),
                _ => last,
            };
        }
        if s <= T::zero() {
            let first = self.vertices[0];
            return match self.head_direction() {
                Some(dir) if s < T::zero() => first + dir * s,
                _ => first,
            };
        }
        // first vertex whose arc length exceeds s; segment is [i-1, i]
        let i = self.cumulative.partition_point(|c| *c <= s);
        let (a, b) = (self.vertices[i - 1], self.vertices[i]);
        let seg = self.cumulative[i] - self.cumulative[i - 1];
        let frac = (s - self.cumulative[i - 1]) / seg;
        a + (b - a) * frac
    }

    /// Distance from `p` to the polyline, optionally including the ray that
    /// extends the final segment.
    pub fn distance_to(&self, p: Point<T>, include_tail_ray: bool) -> T {
        let mut best = self.vertices[0].distance(p);
        for w in self.vertices.windows(2) {
            best = best.min(point_segment_distance(p, w[0], w[1]));
        }
        if include_tail_ray {
            if let Some(dir) = self.tail_direction() {
                let last = self.vertices[self.vertices.len() - 1];
                let along = (p - last).dot(dir);
                if along > T::zero() {
                    best = best.min(p.distance(last + dir * along));
                }
            }
        }
        best
    }

    /// Arc length of the first crossing with `other`, on both polylines.
    pub fn intersection(&self, other: &Polyline<T>) -> Option<(T, T, Point<T>)> {
        for i in 1..self.vertices.len() {
            for j in 1..other.vertices.len() {
                let (p, p2) = (self.vertices[i - 1], self.vertices[i]);
                let (q, q2) = (other.vertices[j - 1], other.vertices[j]);
                if let Some((u, v)) = segment_intersection(p, p2, q, q2) {
                    let s_self = self.cumulative[i - 1] + (self.cumulative[i] - self.cumulative[i - 1]) * u;
                    let s_other =
                        other.cumulative[j - 1] + (other.cumulative[j] - other.cumulative[j - 1]) * v;
                    return Some((s_self, s_other, p + (p2 - p) * u));
                }
            }
        }
        None
    }
}

fn point_segment_distance<T: Scalar>(p: Point<T>, a: Point<T>, b: Point<T>) -> T {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == T::zero() {
        return p.distance(a);
    }
    let u = ((p - a).dot(ab) / len2).max(T::zero()).min(T::one());
    p.distance(a + ab * u)
}

/// Parameters `(u, v)` in `[0, 1]²` where segments `p→p2` and `q→q2` meet.
fn segment_intersection<T: Scalar>(
    p: Point<T>,
    p2: Point<T>,
    q: Point<T>,
    q2: Point<T>,
) -> Option<(T, T)> {
    let r = p2 - p;
    let s = q2 - q;
    let denom = r.x * s.y - r.y * s.x;
    if denom == T::zero() {
        return None;
    }
    let qp = q - p;
    let u = (qp.x * s.y - qp.y * s.x) / denom;
    let v = (qp.x * r.y - qp.y * r.x) / denom;
    let unit = T::zero()..=T::one();
    (unit.contains(&u) && unit.contains(&v)).then_some((u, v))
}
