//! Rate-distortion-perception tradeoff for first-order Gauss-Markov sources.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the `*F64`
//! aliases below are the instantiations the CLI and tests use.

// `!(x >= 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod error;
pub mod linalg;
pub mod monte_carlo;
pub mod perception_metrics;
pub mod rdp_solver;
pub mod scalar;
pub mod source_model;

pub use error::{RdpError, Result};
pub use perception_metrics::PlfKind;
pub use scalar::Scalar;
pub use source_model::{FrameCoeffs, JointGaussian, Rate, ReconPolicy, SourceSpec, VarLabel};

pub type SourceSpecF64 = SourceSpec<f64>;
pub type FrameCoeffsF64 = FrameCoeffs<f64>;
pub type ReconPolicyF64 = ReconPolicy<f64>;
pub type JointGaussianF64 = JointGaussian<f64>;
pub type RateF64 = Rate<f64>;
pub type SourceSpecF32 = SourceSpec<f32>;
pub type JointGaussianF32 = JointGaussian<f32>;
