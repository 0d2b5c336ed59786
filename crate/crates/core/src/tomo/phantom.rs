//! Phantom generation: the standard 10-ellipse head phantom and a seeded
//! random-ellipse generator for training data.

use super::{ImageGrid, PhantomSpec, TomoError};
use crate::image::Image;
use crate::rng::CounterRng;
use crate::scalar::{c, Scalar};

/// `(intensity, semi-axis a, semi-axis b, x0, y0, rotation degrees)`
/// in normalized coordinates on `[-1, 1]^2`. This is the modified
/// (high-contrast) parameterization of the classic head phantom; the summed
/// intensities already lie in `[0, 1]`.
const SHEPP_LOGAN_ELLIPSES: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
];

/// Normalized pixel-center coordinates in `[-1, 1]^2` (y up).
fn normalized_center(grid: &ImageGrid, row: usize, col: usize) -> (f64, f64) {
    let x = (2.0 * col as f64 + 1.0 - grid.width as f64) / grid.width as f64;
    let y = (grid.height as f64 - 2.0 * row as f64 - 1.0) / grid.height as f64;
    (x, y)
}

fn render_ellipses<T: Scalar>(
    grid: &ImageGrid,
    ellipses: &[(f64, f64, f64, f64, f64, f64)],
) -> Image<T> {
    let trig: Vec<(f64, f64)> = ellipses
        .iter()
        .map(|e| (e.5.to_radians()).sin_cos())
        .collect();
    Image::from_fn(grid.dims(), |(r, col)| {
        let (x, y) = normalized_center(grid, r, col);
        let mut v = 0.0;
        for (e, (sin_p, cos_p)) in ellipses.iter().zip(&trig) {
            let (a_int, sa, sb, x0, y0, _) = *e;
            let dx = x - x0;
            let dy = y - y0;
            let u = cos_p * dx + sin_p * dy;
            let w = -sin_p * dx + cos_p * dy;
            if (u / sa).powi(2) + (w / sb).powi(2) <= 1.0 {
                v += a_int;
            }
        }
        c(v.clamp(0.0, 1.0))
    })
}

/// Standard 10-ellipse head phantom with intensities in `[0, 1]`.
pub fn shepp_logan<T: Scalar>(grid: &ImageGrid) -> Image<T> {
    render_ellipses(grid, &SHEPP_LOGAN_ELLIPSES)
}

/// Sum of seeded random ellipses, clipped to `[0, 1]`.
pub fn random_ellipse_phantom<T: Scalar>(
    grid: &ImageGrid,
    seed: u64,
    n_ellipses: usize,
) -> Image<T> {
    let mut rng = CounterRng::new(seed);
    let ellipses: Vec<(f64, f64, f64, f64, f64, f64)> = (0..n_ellipses)
        .map(|_| {
            // Center inside a disk of radius 0.6 so ellipses stay mostly
            // within the field of view.
            let radius = 0.6 * rng.next_unit().sqrt();
            let angle = rng.next_range(0.0, 2.0 * std::f64::consts::PI);
            let x0 = radius * angle.cos();
            let y0 = radius * angle.sin();
            let sa = rng.next_range(0.05, 0.4);
            let sb = rng.next_range(0.05, 0.4);
            let phi = rng.next_range(0.0, 180.0);
            let intensity = rng.next_range(-0.4, 0.7);
            (intensity, sa, sb, x0, y0, phi)
        })
        .collect();
    render_ellipses(grid, &ellipses)
}

/// Generate the phantom selected by `spec`.
pub fn generate_phantom<T: Scalar>(
    grid: &ImageGrid,
    spec: &PhantomSpec,
) -> Result<Image<T>, TomoError> {
    match spec {
        PhantomSpec::SheppLogan => Ok(shepp_logan(grid)),
        PhantomSpec::RandomEllipses { seed, n_ellipses } => {
            Ok(random_ellipse_phantom(grid, *seed, *n_ellipses))
        }
    }
}
