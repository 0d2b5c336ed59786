//! The denoiser abstraction the DDIM sampler drives: anything that predicts
//! noise from `(x_t, t)` and can pull a cotangent back through that
//! prediction.

use super::oracle::GaussianOracleDenoiser;
use super::unet::{ActivationTape, NoisePredictor};
use super::{NnError, ParamVector};
use crate::image::Image;
use crate::scalar::Scalar;

/// Noise predictor with reverse-mode support.
///
/// `predict` returns the prediction together with whatever state the
/// backward pass needs; `vjp_input` computes `(d eps / d x)^T v` for that
/// exact forward evaluation.
pub trait Denoiser<T: Scalar> {
    type Tape;

    fn predict(&self, x: &Image<T>, t: usize) -> Result<(Image<T>, Self::Tape), NnError>;

    fn vjp_input(&self, tape: &Self::Tape, cotangent: &Image<T>) -> Result<Image<T>, NnError>;
}

/// The trained network as a denoiser.
#[derive(Clone, Debug)]
pub struct UnetDenoiser<'a, T> {
    pub predictor: &'a NoisePredictor,
    pub params: &'a ParamVector<T>,
}

impl<'a, T: Scalar> UnetDenoiser<'a, T> {
    pub fn new(predictor: &'a NoisePredictor, params: &'a ParamVector<T>) -> Self {
        Self { predictor, params }
    }
}

impl<'a, T: Scalar> Denoiser<T> for UnetDenoiser<'a, T> {
    type Tape = ActivationTape<T>;

    fn predict(&self, x: &Image<T>, t: usize) -> Result<(Image<T>, Self::Tape), NnError> {
        self.predictor.forward(self.params, x, t)
    }

    fn vjp_input(&self, tape: &Self::Tape, cotangent: &Image<T>) -> Result<Image<T>, NnError> {
        self.predictor.vjp_input_ref(self.params, tape, cotangent)
    }
}

impl<T: Scalar> Denoiser<T> for GaussianOracleDenoiser<T> {
    /// The oracle is linear in `x_t`; its tape is just the coefficient.
    type Tape = T;

    fn predict(&self, x: &Image<T>, t: usize) -> Result<(Image<T>, Self::Tape), NnError> {
        let eps = self.prior.denoise(&self.schedule, x, t)?;
        let gamma = self.prior.coefficient(self.schedule.alpha(t))?;
        Ok((eps, gamma))
    }

    fn vjp_input(&self, tape: &Self::Tape, cotangent: &Image<T>) -> Result<Image<T>, NnError> {
        Ok(cotangent.scale(*tape))
    }
}

/// Predicts zero noise everywhere. Under this denoiser the DDIM recurrences
/// collapse to exact affine rescalings, which pins down closed-form expected
/// values in tests.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroDenoiser;

impl<T: Scalar> Denoiser<T> for ZeroDenoiser {
    type Tape = ();

    fn predict(&self, x: &Image<T>, _t: usize) -> Result<(Image<T>, Self::Tape), NnError> {
        Ok((Image::zeros(x.dims()), ()))
    }

    fn vjp_input(&self, _tape: &Self::Tape, cotangent: &Image<T>) -> Result<Image<T>, NnError> {
        Ok(Image::zeros(cotangent.dims()))
    }
}
