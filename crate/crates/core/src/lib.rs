//! Restoration toolkit for images shot in poor or uneven lighting.
//!
//! The pipeline has three legs:
//!
//! 1. [`synth`] fabricates realistic low-light training pairs from ordinary
//!    images by emulating dimmed capture, gamma correction and A/D
//!    quantization, then un-stretching the result back to full exposure.
//! 2. [`laic`] compensates uneven illumination with a linear program that
//!    keeps the gain field piecewise constant, boosts local contrast and
//!    preserves each pixel's rank against its neighborhood mean.
//! 3. [`nngrad`] + [`trainer`] recover the quantization residual with a small
//!    residual GAN trained under a barrier loss that pins the restored image
//!    inside its quantization interval.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below pick the precision used by the shipped tooling.

pub mod laic;
pub mod nngrad;
pub mod raster;
pub mod scalar;
pub mod synth;
pub mod trainer;

pub use scalar::Scalar;

/// Raster in training/checkpoint precision.
pub type Raster32 = raster::Raster<f32>;
/// Raster in metric/solver precision.
pub type Raster64 = raster::Raster<f64>;
/// Autograd tensor in training precision.
pub type Tensor32 = nngrad::Tensor<f32>;
/// Autograd tensor in gradient-check precision.
pub type Tensor64 = nngrad::Tensor<f64>;
