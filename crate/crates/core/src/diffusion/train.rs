//! Denoising score matching: the network learns to predict the injected
//! noise of corrupted samples, `mean_b || f(x_t, t) - eps_t ||^2` over a
//! batch with `t ~ U{1..T}` and `eps_t ~ N(0, I)`. Optimized with AdamW
//! (decoupled weight decay).

use thiserror::Error;

use super::{normalize, q_sample, DiffusionError, DiffusionSchedule};
use crate::image::Image;
use crate::nn::{Denoiser, NnError, NoisePredictor, ParamVector, UnetDenoiser};
use crate::rng::{derive_stream, CounterRng};
use crate::scalar::{c, cu, Scalar};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

/// One training batch: clean images in the normalized model domain,
/// sampled timesteps, and the matching noise draws.
#[derive(Clone, Debug)]
pub struct TrainBatch<T> {
    pub x0: Vec<Image<T>>,
    pub t: Vec<usize>,
    pub eps: Vec<Image<T>>,
}

impl<T: Scalar> TrainBatch<T> {
    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    /// Draw a batch from normalized-domain images: `t ~ U{1..T}` and one
    /// standard normal noise image per sample, all from stream `seed`.
    pub fn draw(
        images: &[Image<T>],
        schedule: &DiffusionSchedule<T>,
        seed: u64,
    ) -> TrainBatch<T> {
        let mut rng = CounterRng::new(seed);
        let t: Vec<usize> = (0..images.len())
            .map(|_| 1 + rng.next_index(schedule.t_max()))
            .collect();
        let eps: Vec<Image<T>> = images
            .iter()
            .map(|img| {
                let (h, w) = img.dims();
                Image::from_fn((h, w), |_| rng.next_gauss_scalar())
            })
            .collect();
        TrainBatch { x0: images.to_vec(), t, eps }
    }
}

/// DSM loss of an arbitrary denoiser on a batch (no gradient); used to
/// compare trained networks against the closed-form oracle.
pub fn dsm_loss<T: Scalar, D: Denoiser<T>>(
    denoiser: &D,
    batch: &TrainBatch<T>,
    schedule: &DiffusionSchedule<T>,
) -> Result<T, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut total = T::zero();
    for b in 0..batch.len() {
        let x_t = q_sample(&batch.x0[b], batch.t[b], &batch.eps[b], schedule)?;
        let (eps_hat, _) = denoiser.predict(&x_t, batch.t[b])?;
        total = total + eps_hat.sub(&batch.eps[b]).norm_sq();
    }
    Ok(total / cu(batch.len()))
}

/// DSM loss and its exact parameter gradient: the per-sample cotangent is
/// `2 (eps_hat - eps) / batch_size`.
pub fn dsm_loss_and_grad<T: Scalar>(
    predictor: &NoisePredictor,
    params: &ParamVector<T>,
    batch: &TrainBatch<T>,
    schedule: &DiffusionSchedule<T>,
) -> Result<(T, ParamVector<T>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut grads = ParamVector::<T>::zeros(predictor.manifest().clone());
    let inv_b = T::one() / cu::<T>(batch.len());
    let mut total = T::zero();
    for b in 0..batch.len() {
        let x_t = q_sample(&batch.x0[b], batch.t[b], &batch.eps[b], schedule)?;
        let (eps_hat, tape) = predictor.forward(params, &x_t, batch.t[b])?;
        let residual = eps_hat.sub(&batch.eps[b]);
        total = total + residual.norm_sq();
        let cot = residual.scale(c::<T>(2.0) * inv_b);
        predictor.grad_params_into(params, &tape, &cot, grads.data.as_mut_slice())?;
    }
    Ok((total * inv_b, grads))
}

/// Training hyperparameters. The AdamW moments are the standard choice
/// (`beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`, weight decay `1e-2`).
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Apply the seeded rotation/affine/noise augmentation to each sample.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 1e-2,
            seed: 0,
            augment: false,
        }
    }
}

/// Per-epoch mean DSM loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Train the noise predictor on `[0, 1]`-domain images (normalized to the
/// model domain internally). Deterministic in `cfg.seed`; single-threaded.
/// Returns the final parameters and the per-epoch loss trace.
pub fn train<T: Scalar>(
    predictor: &NoisePredictor,
    mut params: ParamVector<T>,
    dataset: &[Image<T>],
    schedule: &DiffusionSchedule<T>,
    cfg: &TrainConfig,
) -> Result<(ParamVector<T>, Vec<EpochLoss>), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let batch_size = cfg.batch_size.max(1);
    let mut m = vec![T::zero(); params.len()];
    let mut v = vec![T::zero(); params.len()];
    let mut step = 0u32;
    let mut trace = Vec::with_capacity(cfg.epochs);

    let (b1, b2) = (c::<T>(ADAM_BETA1), c::<T>(ADAM_BETA2));
    let adam_eps = c::<T>(ADAM_EPS);
    let lr = c::<T>(cfg.lr);
    let wd = c::<T>(cfg.weight_decay);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        CounterRng::new(epoch_stream(cfg.seed, epoch, 0)).shuffle(&mut order);
        let aug_stream = epoch_stream(cfg.seed, epoch, 1);

        let mut epoch_loss = T::zero();
        let mut seen = 0usize;
        for (batch_idx, chunk) in order.chunks(batch_size).enumerate() {
            let images: Vec<Image<T>> = chunk
                .iter()
                .map(|&i| {
                    let img = if cfg.augment {
                        crate::tomo::augment(&dataset[i], derive_stream(aug_stream, i as u64))
                    } else {
                        dataset[i].clone()
                    };
                    normalize(&img)
                })
                .collect();
            let batch = TrainBatch::draw(
                &images,
                schedule,
                epoch_stream(cfg.seed, epoch, 2).wrapping_add(batch_idx as u64),
            );
            let (loss, grads) = dsm_loss_and_grad(predictor, &params, &batch, schedule)?;
            let loss_f = loss.to_f64().unwrap_or(f64::NAN);
            if !loss_f.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: batch_idx, loss: loss_f });
            }
            epoch_loss = epoch_loss + loss * cu(chunk.len());
            seen += chunk.len();

            // AdamW: decoupled weight decay.
            step += 1;
            let bc1 = T::one() - b1.powi(step as i32);
            let bc2 = T::one() - b2.powi(step as i32);
            for ((p, g), (mi, vi)) in params
                .data
                .iter_mut()
                .zip(grads.data.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + (T::one() - b1) * *g;
                *vi = b2 * *vi + (T::one() - b2) * *g * *g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p = *p - lr * (m_hat / (v_hat.sqrt() + adam_eps) + wd * *p);
            }
        }
        trace.push(EpochLoss {
            epoch,
            loss: (epoch_loss / cu(seen)).to_f64().expect("finite"),
        });
    }
    Ok((params, trace))
}

fn epoch_stream(seed: u64, epoch: usize, tag: u64) -> u64 {
    derive_stream(seed, ((epoch as u64) << 8) | tag)
}

/// Convenience: DSM loss of a parameter vector (wraps the predictor in a
/// [`UnetDenoiser`]).
pub fn network_dsm_loss<T: Scalar>(
    predictor: &NoisePredictor,
    params: &ParamVector<T>,
    batch: &TrainBatch<T>,
    schedule: &DiffusionSchedule<T>,
) -> Result<T, TrainError> {
    dsm_loss(&UnetDenoiser::new(predictor, params), batch, schedule)
}
