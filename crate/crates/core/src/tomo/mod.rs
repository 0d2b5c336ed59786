//! Parallel-beam CT physics: geometry, the explicit sparse projector with
//! exact adjoint, filtered backprojection, phantoms and measurement
//! simulation.
//!
//! Conventions used throughout:
//!
//! - The image is an `H x W` grid of square pixels of side `pixel_size`,
//!   centered on the origin. Column index grows with `+x`, row index grows
//!   with `-y` (row 0 is the top of the image).
//! - A projection at angle `theta` integrates along lines
//!   `p(u) = s * (cos theta, sin theta) + u * (-sin theta, cos theta)`,
//!   where `s` is the signed detector offset. Angles are uniform on
//!   `[0, pi)` with `theta_i = i * pi / n_angles` (0 included, pi excluded,
//!   so no ray is duplicated by its opposite).

mod fbp;
mod phantom;
mod projector;
mod simulate;

pub use fbp::{fbp, fbp_unclipped, fbp_with, FbpWindow};
pub use phantom::{generate_phantom, random_ellipse_phantom, shepp_logan};
pub use projector::{back_project, build_projector, build_projector_par, forward_project, Projector};
pub use simulate::{augment, augment_with, simulate_measurements, AugmentParams};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TomoError {
    #[error("invalid image grid: {0}")]
    InvalidGrid(String),
    #[error("invalid scan geometry: {0}")]
    InvalidGeometry(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("invalid phantom spec: {0}")]
    InvalidPhantom(String),
}

/// Pixel grid of the reconstruction domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageGrid {
    pub height: usize,
    pub width: usize,
    /// Physical side length of one pixel (dimensionless 1 by default).
    pub pixel_size: f64,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, pixel_size: f64) -> Result<Self, TomoError> {
        if height < 2 || width < 2 {
            return Err(TomoError::InvalidGrid(format!(
                "grid must be at least 2x2, got {height}x{width}"
            )));
        }
        if !(pixel_size > 0.0) || !pixel_size.is_finite() {
            return Err(TomoError::InvalidGrid(format!(
                "pixel_size must be positive and finite, got {pixel_size}"
            )));
        }
        Ok(Self { height, width, pixel_size })
    }

    pub fn square(n: usize) -> Result<Self, TomoError> {
        Self::new(n, n, 1.0)
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Physical length of the grid diagonal; upper bound on any ray-grid
    /// intersection length.
    pub fn diagonal(&self) -> f64 {
        ((self.height * self.height + self.width * self.width) as f64).sqrt() * self.pixel_size
    }

    /// Physical center of pixel `(row, col)`.
    pub(crate) fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let x0 = -0.5 * self.width as f64 * self.pixel_size;
        let y0 = -0.5 * self.height as f64 * self.pixel_size;
        let x = x0 + (col as f64 + 0.5) * self.pixel_size;
        let y = y0 + ((self.height - 1 - row) as f64 + 0.5) * self.pixel_size;
        (x, y)
    }
}

/// Sparse parallel-beam acquisition geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGeometry {
    pub n_angles: usize,
    /// Projection angles in radians, strictly increasing, uniform on `[0, pi)`.
    pub angles: Vec<f64>,
    pub n_detectors: usize,
    pub detector_spacing: f64,
}

impl ScanGeometry {
    /// Uniform angles `theta_i = i * pi / n_angles`.
    pub fn parallel(
        n_angles: usize,
        n_detectors: usize,
        detector_spacing: f64,
    ) -> Result<Self, TomoError> {
        if n_angles == 0 {
            return Err(TomoError::InvalidGeometry("n_angles must be >= 1".into()));
        }
        if n_detectors == 0 {
            return Err(TomoError::InvalidGeometry("n_detectors must be >= 1".into()));
        }
        if !(detector_spacing > 0.0) || !detector_spacing.is_finite() {
            return Err(TomoError::InvalidGeometry(format!(
                "detector_spacing must be positive and finite, got {detector_spacing}"
            )));
        }
        let angles = (0..n_angles)
            .map(|i| i as f64 * std::f64::consts::PI / n_angles as f64)
            .collect();
        Ok(Self { n_angles, angles, n_detectors, detector_spacing })
    }

    /// Default detector count: `ceil(sqrt(2) * max(H, W))`, enough cells to
    /// cover the grid diagonal at unit spacing.
    pub fn default_n_detectors(grid: &ImageGrid) -> usize {
        (std::f64::consts::SQRT_2 * grid.height.max(grid.width) as f64).ceil() as usize
    }

    pub fn n_rays(&self) -> usize {
        self.n_angles * self.n_detectors
    }

    /// Signed physical offset of detector cell `j`.
    pub(crate) fn detector_offset(&self, j: usize) -> f64 {
        (j as f64 - 0.5 * (self.n_detectors as f64 - 1.0)) * self.detector_spacing
    }
}

/// Phantom selection for data generation.
#[derive(Clone, Debug, PartialEq)]
pub enum PhantomSpec {
    SheppLogan,
    RandomEllipses { seed: u64, n_ellipses: usize },
}
