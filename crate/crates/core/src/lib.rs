//! Single-layer GAN training viewed as online subspace learning.
//!
//! The crate simulates a linear generator / linear discriminator pair trained
//! by two-player SGD on data from a spiked covariance model, integrates the
//! deterministic ODE that the macroscopic overlaps follow in the
//! high-dimensional limit, and benchmarks the GAN against Oja's method and
//! GROUSE with Grassmannian metrics.
//!
//! Numerical code is generic over the scalar type through [`Real`]; the
//! `*64` / `*32` aliases below fix the common instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod gan;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod ode;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type SpikedModel64 = model::SpikedModel<f64>;
pub type SpikedModel32 = model::SpikedModel<f32>;
pub type MacroState64 = model::MacroState<f64>;
pub type MacroState32 = model::MacroState<f32>;
pub type MicroState64 = model::MicroState<f64>;
pub type GanConfig64 = gan::GanConfig<f64>;
pub type GanConfig32 = gan::GanConfig<f32>;
pub type GanState64 = gan::GanState<f64>;
pub type GanState32 = gan::GanState<f32>;
pub type OdeSystem64 = ode::OdeSystem<f64>;
pub type OdeSystem32 = ode::OdeSystem<f32>;
pub type Trajectory64 = model::Trajectory<f64>;
pub type BaselineState64 = baselines::BaselineState<f64>;
pub type DatasetMatrix64 = data::DatasetMatrix<f64>;
