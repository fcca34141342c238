//! Dynamic 3D Gaussian scene fitting with hybrid SE(3) motion bases.
//!
//! A persistent canonical Gaussian cloud is moved through time by per-Gaussian
//! rigid transforms, each the exponential of a coefficient-weighted sum of
//! shared se(3) motion bases: six frozen generators plus a handful of
//! learnable ones. Rendering is a differentiable software splatting
//! rasterizer; fitting runs Adam on photometric, depth, track and coefficient
//! losses against a camera trajectory that is shared verbatim with whatever
//! produced the input video.
//!
//! The math kernels are generic over the scalar type (f32/f64); the pipeline
//! modules work in [`Real`].

pub mod camera;
pub mod dataio;
pub mod error;
pub mod frame;
pub mod metrics;
pub mod num;
pub mod optim;
pub mod render;
pub mod scene;
pub mod se3;
pub mod tracks;

pub use error::{Error, Result};
pub use num::Scalar;

/// Scalar type used by the pipeline modules (optimizer, data I/O, CLI).
pub type Real = f64;

pub type Twist32 = se3::Twist<f32>;
pub type Twist64 = se3::Twist<f64>;
pub type RigidTransform32 = se3::RigidTransform<f32>;
pub type RigidTransform64 = se3::RigidTransform<f64>;
