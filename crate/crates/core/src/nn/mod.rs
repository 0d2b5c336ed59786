//! The noise-prediction network `f(x_t, t)` with an explicit forward pass,
//! input vector-Jacobian products (for latent optimization) and parameter
//! gradients (for training), plus a closed-form Gaussian oracle denoiser.
//!
//! The network is a small UNet: strided-convolution downsampling,
//! nearest-neighbor upsampling followed by convolution, residual blocks
//! with group normalization and exact-erf GELU activations. Timestep
//! conditioning is concatenation-only: a sinusoidal embedding is broadcast
//! to the spatial resolution and stacked with `x_t` along the channel axis.
//! All kernels are 3x3 with zero padding.

mod denoiser;
mod layers;
mod oracle;
mod unet;

pub use denoiser::{Denoiser, UnetDenoiser, ZeroDenoiser};
pub use oracle::{oracle_expected_dsm_loss, GaussianOracleDenoiser, GaussianPrior};
pub use unet::{
    denoise_forward, denoise_grad_params, denoise_vjp_input, ActivationTape, NoisePredictor,
};

use ndarray::Array3;
use thiserror::Error;

use crate::rng::CounterRng;
use crate::scalar::{c, Scalar};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid denoiser config: {0}")]
    InvalidConfig(String),
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("input dims {got:?} not divisible by {required} (network depth)")]
    BadInputDims { got: (usize, usize), required: usize },
    #[error("activation tape does not match this forward pass (stale tape)")]
    StaleTape,
    #[error("parameter vector length {got} does not match layout ({expected})")]
    BadParamLength { expected: usize, got: usize },
    #[error("{0}")]
    Degenerate(String),
}

/// Architecture of the noise predictor at desk scale.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenoiserConfig {
    /// Number of resolution levels.
    pub n_levels: usize,
    /// Channel width per level, one entry per level.
    pub channels: Vec<usize>,
    /// Residual blocks per level.
    pub blocks_per_level: usize,
    /// Group count for group normalization; must divide every width.
    pub group_count: usize,
    /// Channels of the sinusoidal timestep embedding (even).
    pub embed_dim: usize,
    /// Reserved extension point: self-attention at the deepest level is not
    /// implemented at desk scale and must stay disabled.
    pub deep_attention: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            n_levels: 2,
            channels: vec![16, 32],
            blocks_per_level: 2,
            group_count: 4,
            embed_dim: 8,
            deep_attention: false,
        }
    }
}

impl DenoiserConfig {
    /// Smaller preset used by quick tests and training sanity checks.
    pub fn tiny() -> Self {
        Self {
            n_levels: 2,
            channels: vec![8, 16],
            blocks_per_level: 1,
            group_count: 4,
            embed_dim: 8,
            deep_attention: false,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.n_levels == 0 {
            return Err(NnError::InvalidConfig("n_levels must be >= 1".into()));
        }
        if self.channels.len() != self.n_levels {
            return Err(NnError::InvalidConfig(format!(
                "channels has {} entries for {} levels",
                self.channels.len(),
                self.n_levels
            )));
        }
        if self.group_count == 0 {
            return Err(NnError::InvalidConfig("group_count must be >= 1".into()));
        }
        for (l, &ch) in self.channels.iter().enumerate() {
            if ch == 0 || ch % self.group_count != 0 {
                return Err(NnError::InvalidConfig(format!(
                    "channel width {ch} at level {l} not divisible by group_count {}",
                    self.group_count
                )));
            }
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return Err(NnError::InvalidConfig(format!(
                "embed_dim must be even and >= 2, got {}",
                self.embed_dim
            )));
        }
        if self.deep_attention {
            return Err(NnError::InvalidConfig(
                "deep_attention is a reserved extension point and not available".into(),
            ));
        }
        Ok(())
    }

    /// Input height/width must be divisible by this (one halving per
    /// downsampling stage).
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.n_levels - 1)
    }
}

/// Named slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Layout manifest: covers every parameter entry exactly once, in offset
/// order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ParamEntry>,
    pub total_len: usize,
}

impl Manifest {
    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Flat array of all weights and biases plus its layout manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<T> {
    pub data: Vec<T>,
    pub manifest: std::sync::Arc<Manifest>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(manifest: std::sync::Arc<Manifest>) -> Self {
        Self { data: vec![T::zero(); manifest.total_len], manifest }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Order-independent fingerprint of the parameter values; used to detect
    /// stale activation tapes.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.data {
            let bits = v.to_f64().expect("finite").to_bits();
            h ^= bits;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h ^ self.data.len() as u64
    }

    /// Add independent `N(0, std^2)` noise to every entry. Useful for
    /// gradient checks that need a non-degenerate network (the standard
    /// initialization zeroes the output head).
    pub fn jitter(&mut self, seed: u64, std: f64) {
        let mut rng = CounterRng::new(seed);
        for v in self.data.iter_mut() {
            *v = *v + c::<T>(std) * rng.next_gauss_scalar::<T>();
        }
    }
}

/// Fan-in-scaled random initialization: hidden convolution weights are
/// `N(0, 1/fan_in)`, normalization gains are 1, all biases are 0, and the
/// output head is zero-initialized so the freshly initialized network
/// predicts exactly zero noise.
pub fn init_params<T: Scalar>(config: &DenoiserConfig, seed: u64) -> Result<ParamVector<T>, NnError> {
    let predictor = NoisePredictor::new(config.clone())?;
    Ok(predictor.init_params(seed))
}

/// Sinusoidal timestep embedding broadcast over the spatial grid.
///
/// Channel `2i` holds `sin(t / 10000^(2i/embed_dim))` and channel `2i + 1`
/// the matching cosine; every channel is constant across space.
pub fn time_embedding<T: Scalar>(t: usize, embed_dim: usize, dims: (usize, usize)) -> Array3<T> {
    let (h, w) = dims;
    let mut out = Array3::zeros((embed_dim, h, w));
    for i in 0..embed_dim / 2 {
        let freq = 10_000f64.powf(2.0 * i as f64 / embed_dim as f64);
        let phase = t as f64 / freq;
        let s = c::<T>(phase.sin());
        let co = c::<T>(phase.cos());
        out.index_axis_mut(ndarray::Axis(0), 2 * i).fill(s);
        out.index_axis_mut(ndarray::Axis(0), 2 * i + 1).fill(co);
    }
    out
}
