//! Closed-form MMSE denoiser for an isotropic Gaussian data distribution.
//!
//! When the clean data follow `N(mu, sigma^2 I)`, the minimizer of the
//! denoising score matching loss has the closed form
//!
//! ```text
//! eps*(x_t, t) = sqrt(1 - a) / (a sigma^2 + 1 - a) * (x_t - sqrt(a) mu),
//! a = alpha_t,
//! ```
//!
//! obtained by substituting the Gaussian posterior mean
//! `E[x_0 | x_t] = mu + (sqrt(a) sigma^2 / (a sigma^2 + 1 - a)) (x_t - sqrt(a) mu)`
//! into `(x_t - sqrt(a) E[x_0|x_t]) / sqrt(1 - a)` and simplifying. The
//! simplified form stays finite over the whole schedule, including
//! `alpha = 1` (t = 0), where the optimal prediction degenerates to zero;
//! this lets the oracle drive full-range DDIM inversion. It is linear in
//! `x_t`, so its input VJP is exact multiplication by the same coefficient.

use super::NnError;
use crate::diffusion::DiffusionSchedule;
use crate::image::Image;
use crate::scalar::{cu, Scalar};

/// Isotropic Gaussian data prior `N(mu, sigma^2 I)`.
#[derive(Clone, Debug)]
pub struct GaussianPrior<T> {
    pub mean: Image<T>,
    pub variance: T,
}

impl<T: Scalar> GaussianPrior<T> {
    pub fn new(mean: Image<T>, variance: T) -> Result<Self, NnError> {
        if !(variance > T::zero()) || !variance.is_finite() {
            return Err(NnError::Degenerate(format!(
                "prior variance must be positive and finite, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    /// The linear coefficient of the oracle prediction at `alpha_t`.
    pub fn coefficient(&self, alpha: T) -> Result<T, NnError> {
        if !(alpha > T::zero()) || alpha > T::one() {
            return Err(NnError::Degenerate(format!(
                "alpha must lie in (0, 1], got {alpha}"
            )));
        }
        let one_minus = T::one() - alpha;
        Ok(one_minus.sqrt() / (alpha * self.variance + one_minus))
    }

    /// Exact MMSE noise prediction `eps*(x_t, t)`.
    pub fn denoise(
        &self,
        schedule: &DiffusionSchedule<T>,
        x_t: &Image<T>,
        t: usize,
    ) -> Result<Image<T>, NnError> {
        let alpha = schedule
            .alpha_checked(t)
            .ok_or_else(|| NnError::Degenerate(format!("timestep {t} outside schedule")))?;
        let gamma = self.coefficient(alpha)?;
        let sqrt_alpha = alpha.sqrt();
        let mut out = x_t.clone();
        out.scaled_add(-sqrt_alpha, &self.mean);
        Ok(out.scale(gamma))
    }

    /// Expected per-sample DSM loss `E || eps - eps* ||^2` of the oracle at
    /// step `t` for an image with `n_pixels` entries:
    /// `n * a sigma^2 / (a sigma^2 + 1 - a)`.
    pub fn expected_dsm_loss(
        &self,
        schedule: &DiffusionSchedule<T>,
        t: usize,
        n_pixels: usize,
    ) -> T {
        let alpha = schedule.alpha(t);
        let denom = alpha * self.variance + (T::one() - alpha);
        cu::<T>(n_pixels) * alpha * self.variance / denom
    }
}

/// Denoiser wrapper around [`GaussianPrior`] carrying its schedule.
#[derive(Clone, Debug)]
pub struct GaussianOracleDenoiser<T> {
    pub prior: GaussianPrior<T>,
    pub schedule: DiffusionSchedule<T>,
}

impl<T: Scalar> GaussianOracleDenoiser<T> {
    pub fn new(prior: GaussianPrior<T>, schedule: DiffusionSchedule<T>) -> Self {
        Self { prior, schedule }
    }
}

/// Mean oracle DSM loss over uniformly sampled `t in {1..T}` for images of
/// `n_pixels` entries; the attainable minimum of the training objective on
/// Gaussian toy data.
pub fn oracle_expected_dsm_loss<T: Scalar>(
    prior: &GaussianPrior<T>,
    schedule: &DiffusionSchedule<T>,
    n_pixels: usize,
) -> T {
    let total: T = (1..=schedule.t_max())
        .map(|t| prior.expected_dsm_loss(schedule, t, n_pixels))
        .sum();
    total / cu(schedule.t_max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::cosine_noise_schedule;
    use crate::rng::CounterRng;

    fn setup() -> (GaussianPrior<f64>, DiffusionSchedule<f64>) {
        let mean = Image::constant((8, 8), 0.3);
        let prior = GaussianPrior::new(mean, 0.5).unwrap();
        let schedule = cosine_noise_schedule(100);
        (prior, schedule)
    }

    #[test]
    fn rejects_degenerate_variance() {
        let mean = Image::<f64>::zeros((4, 4));
        assert!(GaussianPrior::new(mean.clone(), 0.0).is_err());
        assert!(GaussianPrior::new(mean, -1.0).is_err());
    }

    #[test]
    fn point_mass_limit_recovers_noise() {
        // As sigma^2 -> 0 with x_t = sqrt(a) mu + sqrt(1-a) eps, the oracle
        // returns eps exactly.
        let mean = Image::<f64>::constant((8, 8), 0.3);
        let prior = GaussianPrior::new(mean.clone(), 1e-300).unwrap();
        let schedule = cosine_noise_schedule::<f64>(100);
        let t = 40;
        let a = schedule.alpha(t);
        let eps = Image::<f64>::standard_normal((8, 8), 3);
        let mut x_t = mean.scale(a.sqrt());
        x_t.scaled_add((1.0 - a).sqrt(), &eps);
        let got = prior.denoise(&schedule, &x_t, t).unwrap();
        for (g, e) in got.0.iter().zip(eps.0.iter()) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn alpha_one_prediction_is_zero() {
        let (prior, schedule) = setup();
        let x = Image::<f64>::standard_normal((8, 8), 1);
        let out = prior.denoise(&schedule, &x, 0).unwrap();
        assert!(out.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn marginal_mean_prediction_is_centered() {
        // Over x_t drawn from the true marginal, E[eps*] = 0.
        let (prior, schedule) = setup();
        let t = 30;
        let a = schedule.alpha(t);
        let sigma_t = (a * prior.variance + (1.0 - a)).sqrt();
        let mut rng = CounterRng::new(77);
        let n_draws = 10_000;
        let mut acc = 0.0;
        for _ in 0..n_draws {
            let u = rng.next_gauss();
            // One representative pixel: x_t = sqrt(a) mu + s_t u.
            let x = Image::<f64>::constant((8, 8), a.sqrt() * 0.3 + sigma_t * u);
            let out = prior.denoise(&schedule, &x, t).unwrap();
            acc += out.0[[0, 0]];
        }
        let mean = acc / n_draws as f64;
        // Std of the estimate ~ gamma * sigma_t / sqrt(n).
        let gamma = prior.coefficient(a).unwrap();
        assert!(mean.abs() < 4.0 * gamma * sigma_t / (n_draws as f64).sqrt());
    }

    #[test]
    fn affine_in_input() {
        // eps*(a x + b x') - eps*(0) is linear with the gamma coefficient.
        let (prior, schedule) = setup();
        let t = 25;
        let gamma = prior.coefficient(schedule.alpha(t)).unwrap();
        let x1 = Image::<f64>::standard_normal((8, 8), 1);
        let x2 = Image::<f64>::standard_normal((8, 8), 2);
        let (a, b) = (0.6, -1.1);
        let mut comb = x1.scale(a);
        comb.scaled_add(b, &x2);

        let f = |x: &Image<f64>| prior.denoise(&schedule, x, t).unwrap();
        let zero = Image::<f64>::zeros((8, 8));
        let f0 = f(&zero);
        let lhs = f(&comb).sub(&f0);
        let mut rhs = f(&x1).sub(&f0).scale(a);
        rhs.scaled_add(b, &f(&x2).sub(&f0));
        for (l, r) in lhs.0.iter().zip(rhs.0.iter()) {
            assert!((l - r).abs() <= 1e-12 * l.abs().max(1.0));
        }
        // And the slope is exactly gamma.
        let e = Image::<f64>::constant((8, 8), 1.0);
        let slope = f(&e).sub(&f0).0[[0, 0]];
        assert!((slope - gamma).abs() < 1e-14);
    }

    #[test]
    fn expected_loss_interpolates() {
        let (prior, schedule) = setup();
        // At t -> 0 (alpha -> 1) the noise is unpredictable: loss -> n;
        // at t = T (alpha ~ 0) it is fully recoverable: loss -> 0.
        let n = 64;
        let early = prior.expected_dsm_loss(&schedule, 1, n);
        let late = prior.expected_dsm_loss(&schedule, 100, n);
        assert!(early > 0.8 * n as f64 * prior.variance / (prior.variance + 0.001));
        assert!(late < 0.01 * n as f64);
        let mean = oracle_expected_dsm_loss(&prior, &schedule, n);
        assert!(mean > late && mean < early);
    }
}
