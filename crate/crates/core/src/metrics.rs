//! Reconstruction quality metrics: MSE, PSNR, SSIM.

use thiserror::Error;

use crate::image::Image;
use crate::scalar::{c, cu, Scalar};

/// PSNR reported for identical images (the `mse = 0` cap).
pub const PSNR_CAP_DB: f64 = 300.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("image too small for {0}x{0} SSIM window: {1:?}")]
    TooSmall(usize, (usize, usize)),
    #[error("data range must be positive, got {0}")]
    BadRange(f64),
}

/// Mean squared error.
pub fn mse<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<T, MetricError> {
    if a.dims() != b.dims() {
        return Err(MetricError::ShapeMismatch(a.dims(), b.dims()));
    }
    let sum: T = a
        .0
        .iter()
        .zip(b.0.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(sum / cu(a.len()))
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`] for
/// identical images. The reference range is fixed (1.0 for `[0, 1]`
/// images) rather than taken per-image.
pub fn psnr<T: Scalar>(a: &Image<T>, b: &Image<T>, data_range: f64) -> Result<f64, MetricError> {
    if !(data_range > 0.0) {
        return Err(MetricError::BadRange(data_range));
    }
    let err = mse(a, b)?.to_f64().expect("mse finite");
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (data_range * data_range / err).log10()).min(PSNR_CAP_DB))
}

/// Structural similarity index, mean over valid (fully interior) window
/// positions. Gaussian window 11x11 with sigma 1.5, K1 = 0.01, K2 = 0.03,
/// dynamic range L = 1.
pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<T, MetricError> {
    if a.dims() != b.dims() {
        return Err(MetricError::ShapeMismatch(a.dims(), b.dims()));
    }
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::TooSmall(SSIM_WINDOW, a.dims()));
    }

    let kernel: Vec<T> = {
        let half = (SSIM_WINDOW / 2) as f64;
        let raw: Vec<f64> = (0..SSIM_WINDOW)
            .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| c(v / total)).collect()
    };

    let c1 = c::<T>((SSIM_K1 * 1.0) * (SSIM_K1 * 1.0));
    let c2 = c::<T>((SSIM_K2 * 1.0) * (SSIM_K2 * 1.0));

    let mut total = T::zero();
    let mut count = 0usize;
    for top in 0..=(h - SSIM_WINDOW) {
        for left in 0..=(w - SSIM_WINDOW) {
            let mut mu_a = T::zero();
            let mut mu_b = T::zero();
            let mut aa = T::zero();
            let mut bb = T::zero();
            let mut ab = T::zero();
            for (i, &ki) in kernel.iter().enumerate() {
                for (j, &kj) in kernel.iter().enumerate() {
                    let wgt = ki * kj;
                    let va = a.0[[top + i, left + j]];
                    let vb = b.0[[top + i, left + j]];
                    mu_a = mu_a + wgt * va;
                    mu_b = mu_b + wgt * vb;
                    aa = aa + wgt * va * va;
                    bb = bb + wgt * vb * vb;
                    ab = ab + wgt * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let two = c::<T>(2.0);
            let num = (two * mu_a * mu_b + c1) * (two * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total = total + num / den;
            count += 1;
        }
    }
    Ok(total / cu(count))
}

/// Bundle of all three metrics for one image pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Compute MSE, PSNR (range 1), and SSIM between `a` and `b`.
pub fn report<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<MetricReport, MetricError> {
    Ok(MetricReport {
        mse: mse(a, b)?.to_f64().expect("finite"),
        psnr: psnr(a, b, 1.0)?,
        ssim: ssim(a, b)?.to_f64().expect("finite"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tomo::{shepp_logan, ImageGrid};

    #[test]
    fn mse_basics() {
        let a = Image::<f64>::constant((4, 4), 0.75);
        let b = Image::<f64>::constant((4, 4), 0.25);
        assert_eq!(mse(&a, &b).unwrap(), 0.25);
        assert_eq!(mse(&b, &a).unwrap(), 0.25);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn psnr_fixture() {
        let a = Image::<f64>::constant((4, 4), 0.75);
        let b = Image::<f64>::constant((4, 4), 0.25);
        // mse 0.25 at range 1 -> 10 log10(4) = 6.0206 dB.
        let got = psnr(&a, &b, 1.0).unwrap();
        assert!((got - 6.020_599_913_279_624).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        // Doubling the range adds 20 log10(2).
        let wide = psnr(&a, &b, 2.0).unwrap();
        assert!((wide - got - 20.0 * 2.0f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let a = Image::<f64>::zeros((4, 4));
        let small = Image::<f64>::constant((4, 4), 0.1);
        let large = Image::<f64>::constant((4, 4), 0.3);
        assert!(psnr(&a, &small, 1.0).unwrap() > psnr(&a, &large, 1.0).unwrap());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let grid = ImageGrid::square(32).unwrap();
        let a = shepp_logan::<f64>(&grid);
        let b = a.map(|v| 1.0 - v);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab < 1.0, "inverted image must not be structurally identical");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::<f64>::zeros((8, 8));
        assert!(matches!(ssim(&a, &a), Err(MetricError::TooSmall(..))));
    }

    #[test]
    fn report_consistency() {
        let grid = ImageGrid::square(16).unwrap();
        let a = shepp_logan::<f64>(&grid);
        let r = report(&a, &a).unwrap();
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.psnr, PSNR_CAP_DB);
        assert!((r.ssim - 1.0).abs() < 1e-12);
    }
}
