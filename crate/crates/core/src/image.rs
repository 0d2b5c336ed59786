//! Image and sinogram containers.

use ndarray::Array2;

use crate::rng::CounterRng;
use crate::scalar::{c, Scalar};

/// A 2-D pixel grid holding either the reconstruction target, a generator
/// output, or a latent variable (latents are image-shaped).
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T>(pub Array2<T>);

/// Stacked line-integral projections, one row per acquisition angle.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram<T>(pub Array2<T>);

/// Latents share the image container: `z` has the same shape as `G(z)`.
pub type Latent<T> = Image<T>;

impl<T: Scalar> Image<T> {
    pub fn zeros(dims: (usize, usize)) -> Self {
        Image(Array2::zeros(dims))
    }

    pub fn from_fn(dims: (usize, usize), f: impl FnMut((usize, usize)) -> T) -> Self {
        Image(Array2::from_shape_fn(dims, f))
    }

    pub fn constant(dims: (usize, usize), v: T) -> Self {
        Image(Array2::from_elem(dims, v))
    }

    /// Image of i.i.d. standard normal entries, deterministic in `seed`.
    /// Entries are drawn in row-major order.
    pub fn standard_normal(dims: (usize, usize), seed: u64) -> Self {
        let mut rng = CounterRng::new(seed);
        Image(Array2::from_shape_simple_fn(dims, || {
            rng.next_gauss_scalar()
        }))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Image(self.0.mapv(&f))
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    pub fn dot(&self, other: &Self) -> T {
        self.0.iter().zip(other.0.iter()).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.0
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self + a * other`, elementwise.
    pub fn scaled_add(&mut self, a: T, other: &Self) {
        self.0.zip_mut_with(&other.0, |x, &y| *x = *x + a * y);
    }

    pub fn scale(&self, a: T) -> Self {
        self.map(|v| a * v)
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.scaled_add(T::one(), other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.scaled_add(-T::one(), other);
        out
    }
}

impl<T: Scalar> Sinogram<T> {
    pub fn zeros(n_angles: usize, n_detectors: usize) -> Self {
        Sinogram(Array2::zeros((n_angles, n_detectors)))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.0.iter().zip(other.0.iter()).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.0
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.0.zip_mut_with(&other.0, |x, &y| *x = *x - y);
        out
    }

    /// Standard normal sinogram, deterministic in `seed` (row-major draws).
    pub fn standard_normal(n_angles: usize, n_detectors: usize, seed: u64) -> Self {
        let mut rng = CounterRng::new(seed);
        Sinogram(Array2::from_shape_simple_fn(
            (n_angles, n_detectors),
            || rng.next_gauss_scalar(),
        ))
    }
}

/// Convert an `f64` matrix to the working scalar type.
pub fn array_from_f64<T: Scalar>(a: &Array2<f64>) -> Array2<T> {
    a.mapv(|v| c(v))
}

/// Convert a matrix of the working scalar type to `f64`.
pub fn array_to_f64<T: Scalar>(a: &Array2<T>) -> Array2<f64> {
    a.mapv(|v| v.to_f64().expect("scalar convertible to f64"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_image_is_seed_deterministic() {
        let a = Image::<f64>::standard_normal((8, 8), 5);
        let b = Image::<f64>::standard_normal((8, 8), 5);
        let c = Image::<f64>::standard_normal((8, 8), 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn arithmetic_helpers() {
        let a = Image::<f64>::constant((2, 2), 1.0);
        let b = Image::<f64>::constant((2, 2), 2.0);
        assert_eq!(a.dot(&b), 8.0);
        assert_eq!(a.add(&b).0[[0, 0]], 3.0);
        assert_eq!(b.sub(&a).0[[1, 1]], 1.0);
        assert_eq!(b.norm_sq(), 16.0);
    }
}
