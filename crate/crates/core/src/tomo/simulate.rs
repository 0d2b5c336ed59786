//! Measurement simulation and training-data augmentation.

use super::{forward_project, Projector, TomoError};
use crate::image::{Image, Sinogram};
use crate::rng::CounterRng;
use crate::scalar::{c, Scalar};

/// Simulate noisy projections `y = K x + delta * ||K x||_inf * e` with
/// `e ~ N(0, I)` drawn from the documented counter-based generator
/// (row-major entry order). `delta = 0` returns the clean projection
/// untouched; the result is deterministic in `seed`.
pub fn simulate_measurements<T: Scalar>(
    projector: &Projector<T>,
    x_gt: &Image<T>,
    delta: f64,
    seed: u64,
) -> Result<Sinogram<T>, TomoError> {
    if delta < 0.0 {
        return Err(TomoError::InvalidGeometry(format!(
            "noise level must be >= 0, got {delta}"
        )));
    }
    let mut y = forward_project(projector, x_gt)?;
    if delta > 0.0 {
        let scale = c::<T>(delta) * y.max_abs();
        let mut rng = CounterRng::new(seed);
        for v in y.0.iter_mut() {
            *v = *v + scale * rng.next_gauss_scalar();
        }
    }
    Ok(y)
}

/// Parameters of one augmentation draw. Degenerate parameters (zero
/// rotation/shift, unit scale, zero noise) reproduce the input exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    /// Rotation in radians about the image center.
    pub rotation: f64,
    /// Shift in pixels, (rows, cols).
    pub shift: (f64, f64),
    /// Isotropic scale about the image center.
    pub scale: f64,
    /// Additive Gaussian noise standard deviation.
    pub noise_std: f64,
    /// Seed of the noise stream.
    pub noise_seed: u64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self { rotation: 0.0, shift: (0.0, 0.0), scale: 1.0, noise_std: 0.0, noise_seed: 0 }
    }

    /// Draw augmentation parameters from `seed`: rotation within +-15
    /// degrees, shifts within +-2 pixels, scale within +-5%, noise std in
    /// `[0, 0.02]`.
    pub fn draw(seed: u64) -> Self {
        let mut rng = CounterRng::new(seed);
        let rotation = rng.next_range(-15.0, 15.0).to_radians();
        let shift = (rng.next_range(-2.0, 2.0), rng.next_range(-2.0, 2.0));
        let scale = rng.next_range(0.95, 1.05);
        let noise_std = rng.next_range(0.0, 0.02);
        let noise_seed = rng.next_u64();
        Self { rotation, shift, scale, noise_std, noise_seed }
    }
}

/// Apply the affine transform by inverse mapping with bilinear sampling
/// (zero outside), then additive noise; output clipped to `[0, 1]`.
pub fn augment_with<T: Scalar>(x: &Image<T>, params: &AugmentParams) -> Image<T> {
    let (h, w) = x.dims();
    let cy = 0.5 * (h as f64 - 1.0);
    let cx = 0.5 * (w as f64 - 1.0);
    let (sin_r, cos_r) = params.rotation.sin_cos();
    let inv_scale = 1.0 / params.scale;

    let mut out = Image::from_fn((h, w), |(r, col)| {
        // Destination pixel -> source coordinates (inverse map).
        let dy = r as f64 - cy - params.shift.0;
        let dx = col as f64 - cx - params.shift.1;
        let sy = (cos_r * dy - sin_r * dx) * inv_scale + cy;
        let sx = (sin_r * dy + cos_r * dx) * inv_scale + cx;
        bilinear(x, sy, sx)
    });

    if params.noise_std > 0.0 {
        let std = c::<T>(params.noise_std);
        let mut rng = CounterRng::new(params.noise_seed);
        for v in out.0.iter_mut() {
            *v = *v + std * rng.next_gauss_scalar();
        }
    }
    out.clamp01()
}

/// Seeded augmentation: rotation, shift, scale, additive Gaussian noise.
pub fn augment<T: Scalar>(x: &Image<T>, seed: u64) -> Image<T> {
    augment_with(x, &AugmentParams::draw(seed))
}

fn bilinear<T: Scalar>(x: &Image<T>, sy: f64, sx: f64) -> T {
    let (h, w) = x.dims();
    let y0 = sy.floor();
    let x0 = sx.floor();
    let fy = sy - y0;
    let fx = sx - x0;
    let sample = |r: i64, c_: i64| -> T {
        if r >= 0 && r < h as i64 && c_ >= 0 && c_ < w as i64 {
            x.0[[r as usize, c_ as usize]]
        } else {
            T::zero()
        }
    };
    let (r0, c0) = (y0 as i64, x0 as i64);
    let (wy0, wy1) = (c::<T>(1.0 - fy), c::<T>(fy));
    let (wx0, wx1) = (c::<T>(1.0 - fx), c::<T>(fx));
    wy0 * (wx0 * sample(r0, c0) + wx1 * sample(r0, c0 + 1))
        + wy1 * (wx0 * sample(r0 + 1, c0) + wx1 * sample(r0 + 1, c0 + 1))
}

#[cfg(test)]
mod tests {
    use super::super::{build_projector, ImageGrid, ScanGeometry};
    use super::*;

    fn setup() -> (ImageGrid, Projector<f64>, Image<f64>) {
        let grid = ImageGrid::square(24).unwrap();
        let geom = ScanGeometry::parallel(12, 35, 1.0).unwrap();
        let proj = build_projector::<f64>(&geom, &grid);
        let x = super::super::shepp_logan::<f64>(&grid);
        (grid, proj, x)
    }

    #[test]
    fn zero_noise_is_exact_projection() {
        let (_, proj, x) = setup();
        let clean = forward_project(&proj, &x).unwrap();
        let y = simulate_measurements(&proj, &x, 0.0, 123).unwrap();
        assert_eq!(y, clean);
    }

    #[test]
    fn same_seed_bit_identical() {
        let (_, proj, x) = setup();
        let a = simulate_measurements(&proj, &x, 0.05, 7).unwrap();
        let b = simulate_measurements(&proj, &x, 0.05, 7).unwrap();
        let other = simulate_measurements(&proj, &x, 0.05, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, other);
    }

    #[test]
    fn noise_scale_matches_delta() {
        let (_, proj, x) = setup();
        let delta = 0.01;
        let clean = forward_project(&proj, &x).unwrap();
        let sigma = delta * clean.max_abs();
        // Accumulate deviations over many seeds to pass the 1e4-sample bar.
        let mut n = 0usize;
        let mut sum_sq = 0.0;
        for seed in 0..30u64 {
            let noisy = simulate_measurements(&proj, &x, delta, seed).unwrap();
            for (a, b) in noisy.0.iter().zip(clean.0.iter()) {
                sum_sq += (a - b) * (a - b);
                n += 1;
            }
        }
        assert!(n >= 10_000);
        let emp_std = (sum_sq / n as f64).sqrt();
        assert!(
            (emp_std - sigma).abs() <= 0.05 * sigma,
            "empirical std {emp_std}, expected {sigma}"
        );
    }

    #[test]
    fn negative_delta_rejected() {
        let (_, proj, x) = setup();
        assert!(simulate_measurements(&proj, &x, -0.1, 0).is_err());
    }

    #[test]
    fn augment_identity_params_is_exact() {
        let (_, _, x) = setup();
        let y = augment_with(&x, &AugmentParams::identity());
        assert_eq!(x, y);
    }

    #[test]
    fn augment_deterministic_and_in_range() {
        let (_, _, x) = setup();
        let a = augment(&x, 99);
        let b = augment(&x, 99);
        let other = augment(&x, 100);
        assert_eq!(a, b);
        assert_ne!(a, other);
        assert!(a.0.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
