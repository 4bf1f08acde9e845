//! Desk-scale lab for few-step diffusion sampling of toy molecular
//! structures: stochastic and deterministic samplers over pluggable
//! denoisers, the training objectives behind them, block pruning plus
//! finetuning, structure-similarity metrics, and an analytic FLOPs model
//! for AF3-style architecture configurations.
//!
//! Everything numeric is generic over the scalar type via [`num::Real`]
//! (`f32` or `f64`); the aliases at the crate root fix `f64`, which is
//! what the CLI uses.

pub mod denoise;
pub mod error;
pub mod flops;
pub mod geom;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod num;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod train;
pub mod vec3;

pub use error::{Error, Result};
pub use num::Real;
pub use rng::RngStream;

/// Default-precision structure.
pub type Structure = geom::Structure<f64>;
/// Default-precision 3-vector.
pub type Vec3 = vec3::Vec3<f64>;
/// Default-precision trajectory.
pub type Trajectory = sampler::Trajectory<f64>;
/// Default-precision metric report.
pub type MetricReport = metrics::MetricReport<f64>;
