//! Regularized latent reconstruction: minimize
//! `F(z) = 1/2 ||K denorm(G(z)) - y||^2 + lambda1 ||z||^2 + lambda2 TV(G(z))`
//! over the latent `z` with Adam and a cosine-annealed step size, starting
//! from either a random latent or the DDIM inversion of the FBP image.

mod objective;
mod solver;

pub use objective::{
    objective, objective_grad, objective_terms_and_grad, tikhonov, tv_smooth, ObjectiveTerms,
};
pub use solver::{
    init_latent_fbp, init_latent_random, reconstruct, InitMode, LrMode, ReconstructionResult,
    TraceRow,
};

use thiserror::Error;

use crate::diffusion::{DiffusionError, StepPlan};
use crate::image::Image;
use crate::scalar::{c, Scalar};

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("invalid objective config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value encountered: {0}")]
    NonFiniteValue(String),
    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteObjective {
        iteration: usize,
        /// Trace rows recorded before the abort.
        partial_trace: Vec<TraceRow>,
    },
    #[error(transparent)]
    Tomo(#[from] crate::tomo::TomoError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}

/// Weights and schedule of the latent objective.
#[derive(Clone, Debug)]
pub struct ObjectiveConfig<T> {
    /// Latent (Tikhonov) weight.
    pub lambda1: T,
    /// Image total-variation weight.
    pub lambda2: T,
    /// TV smoothing parameter.
    pub tv_beta: T,
    /// Step-size schedule upper bound.
    pub nu_max: T,
    /// Step-size schedule lower bound.
    pub nu_min: T,
    /// Iteration budget (fixed; no early stopping).
    pub maxit: usize,
    /// Sampling plan of the generator.
    pub plan: StepPlan,
}

impl<T: Scalar> ObjectiveConfig<T> {
    /// Defaults: `lambda1 = 1e-4`, `lambda2 = 1e-3`, `tv_beta = 1e-3`,
    /// `nu_max = 1e-2`, `nu_min = 1e-5`, `maxit = 300`.
    pub fn new(plan: StepPlan) -> Self {
        Self {
            lambda1: c(1e-4),
            lambda2: c(1e-3),
            tv_beta: c(1e-3),
            nu_max: c(1e-2),
            nu_min: c(1e-5),
            maxit: 300,
            plan,
        }
    }

    pub fn validate(&self) -> Result<(), ReconError> {
        if self.lambda1 < T::zero() || self.lambda2 < T::zero() {
            return Err(ReconError::InvalidConfig(
                "regularization weights must be >= 0".into(),
            ));
        }
        if !(self.tv_beta > T::zero()) {
            return Err(ReconError::InvalidConfig("tv_beta must be > 0".into()));
        }
        if !(self.nu_min > T::zero()) || self.nu_max < self.nu_min {
            return Err(ReconError::InvalidConfig(
                "need nu_max >= nu_min > 0".into(),
            ));
        }
        if self.maxit == 0 {
            return Err(ReconError::InvalidConfig("maxit must be >= 1".into()));
        }
        Ok(())
    }
}

/// Cosine-annealed step size:
/// `nu_k = nu_min + (nu_max - nu_min) (1 + cos(pi k / maxit)) / 2`,
/// monotone non-increasing from `nu_max` at `k = 0` to `nu_min` at
/// `k = maxit`.
pub fn cosine_lr<T: Scalar>(k: usize, maxit: usize, nu_min: T, nu_max: T) -> T {
    debug_assert!(k <= maxit);
    let cos = c::<T>((std::f64::consts::PI * k as f64 / maxit as f64).cos());
    nu_min + c::<T>(0.5) * (nu_max - nu_min) * (T::one() + cos)
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adam moments over an image-shaped variable.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Image<T>,
    pub v: Image<T>,
    pub k: u32,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(dims: (usize, usize)) -> Self {
        Self { m: Image::zeros(dims), v: Image::zeros(dims), k: 0 }
    }
}

/// One bias-corrected Adam update with step size `nu`.
pub fn adam_step<T: Scalar>(
    mut state: AdamState<T>,
    z: &Image<T>,
    grad: &Image<T>,
    nu: T,
) -> (Image<T>, AdamState<T>) {
    debug_assert_eq!(z.dims(), grad.dims());
    state.k += 1;
    let (b1, b2) = (c::<T>(ADAM_BETA1), c::<T>(ADAM_BETA2));
    let eps = c::<T>(ADAM_EPS);
    let bc1 = T::one() - b1.powi(state.k as i32);
    let bc2 = T::one() - b2.powi(state.k as i32);
    let mut out = z.clone();
    for ((zi, gi), (mi, vi)) in out
        .0
        .iter_mut()
        .zip(grad.0.iter())
        .zip(state.m.0.iter_mut().zip(state.v.0.iter_mut()))
    {
        *mi = b1 * *mi + (T::one() - b1) * *gi;
        *vi = b2 * *vi + (T::one() - b2) * *gi * *gi;
        let m_hat = *mi / bc1;
        let v_hat = *vi / bc2;
        *zi = *zi - nu * m_hat / (v_hat.sqrt() + eps);
    }
    (out, state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_lr_endpoints_and_midpoint() {
        let (lo, hi) = (1e-5f64, 1e-2);
        assert_eq!(cosine_lr(0, 300, lo, hi), hi);
        assert_eq!(cosine_lr(300, 300, lo, hi), lo);
        let mid = cosine_lr(150, 300, lo, hi);
        assert!((mid - 5.005e-3).abs() < 1e-15);
    }

    #[test]
    fn cosine_lr_monotone_non_increasing() {
        let mut prev = f64::INFINITY;
        for k in 0..=100 {
            let v = cosine_lr(k, 100, 1e-5, 1e-2);
            assert!(v <= prev);
            assert!((1e-5..=1e-2).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn adam_zero_grad_is_identity() {
        let z = Image::<f64>::standard_normal((4, 4), 1);
        let g = Image::<f64>::zeros((4, 4));
        let (z1, st) = adam_step(AdamState::new((4, 4)), &z, &g, 1e-2);
        assert_eq!(z1, z);
        assert_eq!(st.k, 1);
    }

    #[test]
    fn adam_first_step_magnitude() {
        // With bias correction, the first update is ~nu * sign(g).
        let z = Image::<f64>::zeros((1, 2));
        let mut g = Image::<f64>::zeros((1, 2));
        g.0[[0, 0]] = 3.0;
        g.0[[0, 1]] = -0.7;
        let nu = 1e-2;
        let (z1, _) = adam_step(AdamState::new((1, 2)), &z, &g, nu);
        for (i, &gi) in [3.0, -0.7].iter().enumerate() {
            let expected = -nu * gi / (gi.abs() + ADAM_EPS);
            assert!((z1.0[[0, i]] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let z = Image::<f64>::standard_normal((4, 4), 2);
        let g = Image::<f64>::standard_normal((4, 4), 3);
        let (a, sa) = adam_step(AdamState::new((4, 4)), &z, &g, 1e-3);
        let (b, sb) = adam_step(AdamState::new((4, 4)), &z, &g, 1e-3);
        assert_eq!(a, b);
        assert_eq!(sa.m, sb.m);
        assert_eq!(sa.v, sb.v);
    }
}
