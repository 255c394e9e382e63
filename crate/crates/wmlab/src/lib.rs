//! Semantic-watermark testbed for latent diffusion.
//!
//! An analytic Gaussian-mixture noise predictor stands in for the
//! diffusion U-Net, an orthogonal linear map stands in for the VAE, and
//! three initial-noise watermarks (Tree-Ring, Gaussian Shading, T2SMark)
//! are embedded, attacked by gradient-based imprint removal/forgery, and
//! defended by PGID (progressive guided inversion and denoising).
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which every experiment uses.

pub mod attacks;
pub mod codec;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod pgid;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod special;
pub mod tensorgrad;
pub mod watermarks;

pub use error::{Result, WmError};
pub use scalar::Scalar;

/// A latent `z_t` as a flat vector.
pub type Latent<T> = Vec<T>;
/// A decoded "image" (the codec's output space).
pub type Image<T> = Vec<T>;

pub type NoiseSchedule = schedule::NoiseSchedule<f64>;
pub type ScoreModel = diffusion::ScoreModel<f64>;
pub type Ddim = diffusion::Ddim<f64>;
pub type Trajectory = diffusion::Trajectory<f64>;
pub type LatentCodec = codec::LatentCodec<f64>;
pub type Tape = tensorgrad::Tape<f64>;
pub type Matrix = tensorgrad::Matrix<f64>;
