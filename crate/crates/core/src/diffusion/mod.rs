//! Diffusion machinery: the noise schedule, forward corruption, the
//! deterministic DDIM generator `G(z)` with its inversion and VJP, and
//! denoising score matching training.

mod ddim;
mod train;

pub use ddim::{ddim_invert, ddim_sample, ddim_sample_vjp, ddim_sample_vjp_traj, Trajectory};
pub use train::{
    dsm_loss, dsm_loss_and_grad, network_dsm_loss, train, EpochLoss, TrainBatch, TrainConfig,
    TrainError,
};

use thiserror::Error;

use crate::image::Image;
use crate::scalar::{c, Scalar};

/// Lower clip for the cumulative coefficients: the reverse recurrences
/// divide by `sqrt(alpha_t)`, so alpha is kept away from zero.
pub const ALPHA_FLOOR: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid step plan: {0}")]
    InvalidPlan(String),
    #[error("timestep {t} outside schedule 0..={t_max}")]
    BadTimestep { t: usize, t_max: usize },
    #[error("alpha at t={t} is below the clip floor")]
    AlphaBelowFloor { t: usize },
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}

/// Cumulative diffusion coefficients `alpha_0..alpha_T`, monotone
/// non-increasing from `alpha_0 = 1` down to (nearly) zero.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule<T> {
    alphas: Vec<T>,
}

impl<T: Scalar> DiffusionSchedule<T> {
    pub fn from_alphas(alphas: Vec<T>) -> Result<Self, DiffusionError> {
        if alphas.len() < 2 {
            return Err(DiffusionError::InvalidSchedule(
                "need at least alpha_0 and alpha_1".into(),
            ));
        }
        if alphas[0] != T::one() {
            return Err(DiffusionError::InvalidSchedule(format!(
                "alpha_0 must be 1, got {}",
                alphas[0]
            )));
        }
        for (t, w) in alphas.windows(2).enumerate() {
            if !(w[1] <= w[0]) {
                return Err(DiffusionError::InvalidSchedule(format!(
                    "alpha must be non-increasing; violated at t={}",
                    t + 1
                )));
            }
        }
        let last = *alphas.last().unwrap();
        if !(last > T::zero()) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "alpha_T must be positive, got {last}"
            )));
        }
        Ok(Self { alphas })
    }

    /// Total number of diffusion steps `T`.
    pub fn t_max(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn alpha(&self, t: usize) -> T {
        self.alphas[t]
    }

    pub fn alpha_checked(&self, t: usize) -> Option<T> {
        self.alphas.get(t).copied()
    }

    pub fn alphas(&self) -> &[T] {
        &self.alphas
    }
}

/// Cosine noise schedule: `alpha_t = f(t) / f(0)` with
/// `f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2)`, `s = 0.008`, clipped to
/// `[ALPHA_FLOOR, 1]`. `alpha_0 = 1` exactly.
pub fn cosine_noise_schedule<T: Scalar>(t_total: usize) -> DiffusionSchedule<T> {
    assert!(t_total >= 1, "schedule needs at least one step");
    let s = 0.008;
    let f = |t: f64| {
        let arg = ((t / t_total as f64 + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2;
        arg.cos().powi(2)
    };
    let f0 = f(0.0);
    let alphas = (0..=t_total)
        .map(|t| {
            let a = (f(t as f64) / f0).clamp(ALPHA_FLOOR, 1.0);
            c::<T>(a)
        })
        .collect();
    DiffusionSchedule::from_alphas(alphas).expect("cosine schedule is valid by construction")
}

/// Ordered sub-sequence of timesteps used for sampling and inversion;
/// strictly increasing with the final entry at `T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepPlan {
    taus: Vec<usize>,
}

impl StepPlan {
    pub fn new(taus: Vec<usize>, t_max: usize) -> Result<Self, DiffusionError> {
        if taus.is_empty() {
            return Err(DiffusionError::InvalidPlan("plan is empty".into()));
        }
        if taus[0] == 0 {
            return Err(DiffusionError::InvalidPlan("taus must start at >= 1".into()));
        }
        if !taus.windows(2).all(|w| w[0] < w[1]) {
            return Err(DiffusionError::InvalidPlan(
                "taus must be strictly increasing".into(),
            ));
        }
        if *taus.last().unwrap() != t_max {
            return Err(DiffusionError::InvalidPlan(format!(
                "last tau must equal T={t_max}, got {}",
                taus.last().unwrap()
            )));
        }
        Ok(Self { taus })
    }

    /// `steps` uniformly spaced timesteps ending at `T`.
    pub fn uniform(t_max: usize, steps: usize) -> Result<Self, DiffusionError> {
        if steps == 0 || steps > t_max {
            return Err(DiffusionError::InvalidPlan(format!(
                "step count {steps} must lie in 1..={t_max}"
            )));
        }
        let taus = (1..=steps)
            .map(|i| ((i * t_max) as f64 / steps as f64).round() as usize)
            .collect();
        Self::new(taus, t_max)
    }

    /// Every timestep `1..=T`.
    pub fn full(t_max: usize) -> Self {
        Self { taus: (1..=t_max).collect() }
    }

    pub fn taus(&self) -> &[usize] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }
}

/// Corrupt `x0` to diffusion time `t`:
/// `x_t = sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps`.
pub fn q_sample<T: Scalar>(
    x0: &Image<T>,
    t: usize,
    eps: &Image<T>,
    schedule: &DiffusionSchedule<T>,
) -> Result<Image<T>, DiffusionError> {
    let alpha = schedule
        .alpha_checked(t)
        .ok_or(DiffusionError::BadTimestep { t, t_max: schedule.t_max() })?;
    let mut out = x0.scale(alpha.sqrt());
    out.scaled_add((T::one() - alpha).sqrt(), eps);
    Ok(out)
}

/// Map `[0, 1]` intensities to the `[-1, 1]` model domain: `2x - 1`.
pub fn normalize<T: Scalar>(x: &Image<T>) -> Image<T> {
    x.map(|v| c::<T>(2.0) * v - T::one())
}

/// Inverse of [`normalize`] with the model-domain clip applied first:
/// input is clipped to `[-1, 1]`, then mapped to `[0, 1]`.
pub fn denormalize<T: Scalar>(x: &Image<T>) -> Image<T> {
    let half = c::<T>(0.5);
    x.map(|v| half * (v.max(-T::one()).min(T::one()) + T::one()))
}

/// Pass-through subgradient of the clip inside [`denormalize`]: 1 on
/// `[-1, 1]`, 0 outside.
pub fn clip_mask<T: Scalar>(x: &Image<T>) -> Image<T> {
    x.map(|v| {
        if v >= -T::one() && v <= T::one() {
            T::one()
        } else {
            T::zero()
        }
    })
}
