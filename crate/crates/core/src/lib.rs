//! Task-informed motion prediction.
//!
//! A trajectory predictor emits `K` weighted joint samples of the future
//! motion of every agent in a scene. Besides the usual displacement-based
//! accuracy loss, the predictor is trained against a differentiable
//! utility of a downstream decision task (a planner choosing among ego
//! plan candidates, or a pre-collision warning system), so that the few
//! samples it can afford carry the information the task needs.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the 64-bit instantiation used for
//! training and for the on-disk formats.

pub mod autodiff;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod simgen;
pub mod tasks;

pub use scalar::Scalar;

/// Default real type for training, datasets and checkpoints.
pub type Real = f64;

pub type Point = geometry::Point<Real>;
pub type Trajectory = geometry::Trajectory<Real>;
pub type Scene = geometry::Scene<Real>;
pub type NormalizationFrame = geometry::NormalizationFrame<Real>;
pub type Tensor = autodiff::Tensor<Real>;
pub type Tape = autodiff::Tape<Real>;
pub type ModelParams = model::ModelParams<Real>;
pub type PredictionSampleSet = model::PredictionSampleSet<Real>;

pub type Trajectory32 = geometry::Trajectory<f32>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape32 = autodiff::Tape<f32>;
