//! Sparse-view CT reconstruction with a diffusion generative prior.
//!
//! The library covers the full pipeline at desk scale:
//!
//! - [`tomo`]: parallel-beam CT physics — an explicit sparse projector with
//!   exact adjoint (Siddon ray tracing), filtered backprojection, phantom
//!   generation and noisy measurement simulation.
//! - [`nn`]: a small UNet-style noise-prediction network with hand-written
//!   forward pass, input vector-Jacobian products and parameter gradients,
//!   plus a closed-form Gaussian oracle denoiser for exact testing.
//! - [`diffusion`]: cosine noise schedule, forward corruption, the
//!   deterministic DDIM generator `G(z)`, DDIM inversion, and denoising
//!   score matching training.
//! - [`recon`]: the regularized latent objective
//!   `F(z) = 1/2 ||K G(z) - y||^2 + lambda1 ||z||^2 + lambda2 TV(G(z))`,
//!   its exact gradient, Adam with a cosine-annealed step size, FBP-based
//!   initialization via DDIM inversion, and the reconstruction loop with
//!   ablation switches.
//! - [`metrics`]: MSE / PSNR / SSIM.
//! - [`io`]: binary image and weight formats, PNG export, CSV traces.
//!
//! All numerical code is generic over the scalar type through the
//! [`Scalar`] trait (`f32` or `f64`); concrete aliases such as
//! [`ImageF64`] are provided at the crate root. File formats and the
//! reference CLI operate in `f64`.

pub mod diffusion;
pub mod image;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod recon;
pub mod rng;
pub mod scalar;
pub mod tomo;

pub use image::{Image, Sinogram};
pub use scalar::Scalar;

/// `f64` image (the precision used by the CLI and file formats).
pub type ImageF64 = Image<f64>;
/// `f32` image.
pub type ImageF32 = Image<f32>;
/// `f64` sinogram.
pub type SinogramF64 = Sinogram<f64>;
/// `f32` sinogram.
pub type SinogramF32 = Sinogram<f32>;
/// `f64` projector.
pub type ProjectorF64 = tomo::Projector<f64>;
/// `f64` diffusion schedule.
pub type ScheduleF64 = diffusion::DiffusionSchedule<f64>;
