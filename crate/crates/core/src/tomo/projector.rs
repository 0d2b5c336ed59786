//! Ray-driven sparse projector.
//!
//! Row `(a, d)` of the system matrix holds the exact intersection lengths of
//! the ray at angle `a`, detector offset `d`, with every pixel it crosses
//! (Siddon traversal, one ray per detector cell center). The adjoint is the
//! exact transpose of the stored entries, so `<Kx, y> = <x, K^T y>` holds to
//! rounding error by construction.

use ndarray::Array2;
use rayon::prelude::*;

use super::{ImageGrid, ScanGeometry, TomoError};
use crate::image::{Image, Sinogram};
use crate::scalar::{c, Scalar};

/// Explicit sparse forward operator in compressed-row layout.
#[derive(Clone, Debug)]
pub struct Projector<T> {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    weights: Vec<T>,
    pub grid: ImageGrid,
    pub geometry: ScanGeometry,
}

impl<T: Scalar> Projector<T> {
    pub fn rows(&self) -> usize {
        self.n_rows
    }

    pub fn cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    /// Column indices and weights of one matrix row.
    pub fn row_entries(&self, row: usize) -> (&[u32], &[T]) {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        (&self.col_idx[lo..hi], &self.weights[lo..hi])
    }
}

/// Intersection lengths of the line `p0 + t*u` (unit direction `u`) with all
/// grid pixels, as `(flat pixel index, length)` pairs in traversal order.
fn trace_ray(grid: &ImageGrid, p0: (f64, f64), u: (f64, f64)) -> Vec<(u32, f64)> {
    let h = grid.pixel_size;
    let (nx, ny) = (grid.width, grid.height);
    let x_min = -0.5 * nx as f64 * h;
    let y_min = -0.5 * ny as f64 * h;
    let x_max = -x_min;
    let y_max = -y_min;

    // Parametric interval of the ray inside the grid bounding box.
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (p, d, lo, hi) in [(p0.0, u.0, x_min, x_max), (p0.1, u.1, y_min, y_max)] {
        if d.abs() < 1e-14 {
            if p < lo || p > hi {
                return Vec::new();
            }
        } else {
            let (a, b) = ((lo - p) / d, (hi - p) / d);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    let eps = 1e-12 * h;
    if t0 + eps >= t1 {
        return Vec::new();
    }

    // Crossing parameters with vertical and horizontal grid lines, each
    // already sorted by t; merge with the interval endpoints.
    let line_crossings = |p: f64, d: f64, lo: f64, n: usize| -> Vec<f64> {
        if d.abs() < 1e-14 {
            return Vec::new();
        }
        let mut ts: Vec<f64> = (0..=n)
            .map(|k| (lo + k as f64 * h - p) / d)
            .filter(|t| *t > t0 + eps && *t < t1 - eps)
            .collect();
        if d < 0.0 {
            ts.reverse();
        }
        ts
    };
    let tx = line_crossings(p0.0, u.0, x_min, nx);
    let ty = line_crossings(p0.1, u.1, y_min, ny);

    let mut cuts = Vec::with_capacity(tx.len() + ty.len() + 2);
    cuts.push(t0);
    let (mut i, mut j) = (0, 0);
    while i < tx.len() || j < ty.len() {
        let t = if j >= ty.len() || (i < tx.len() && tx[i] <= ty[j]) {
            i += 1;
            tx[i - 1]
        } else {
            j += 1;
            ty[j - 1]
        };
        if t - *cuts.last().unwrap() > eps {
            cuts.push(t);
        }
    }
    if t1 - *cuts.last().unwrap() > eps {
        cuts.push(t1);
    }

    // Each consecutive pair is one segment; its midpoint identifies the pixel.
    let mut out = Vec::with_capacity(cuts.len());
    for w in cuts.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let tm = 0.5 * (ta + tb);
        let x = p0.0 + tm * u.0;
        let y = p0.1 + tm * u.1;
        let ix = ((x - x_min) / h).floor() as i64;
        let iy = ((y - y_min) / h).floor() as i64;
        if ix < 0 || ix >= nx as i64 || iy < 0 || iy >= ny as i64 {
            continue;
        }
        let row = ny as i64 - 1 - iy;
        let flat = (row as usize * nx + ix as usize) as u32;
        out.push((flat, tb - ta));
    }
    out
}

fn ray_for(geometry: &ScanGeometry, angle_idx: usize, det_idx: usize) -> ((f64, f64), (f64, f64)) {
    let theta = geometry.angles[angle_idx];
    let s = geometry.detector_offset(det_idx);
    let (sin_t, cos_t) = theta.sin_cos();
    ((s * cos_t, s * sin_t), (-sin_t, cos_t))
}

fn assemble<T: Scalar>(
    geometry: &ScanGeometry,
    grid: &ImageGrid,
    rows: Vec<Vec<(u32, f64)>>,
) -> Projector<T> {
    let n_rows = geometry.n_rays();
    let mut row_ptr = Vec::with_capacity(n_rows + 1);
    row_ptr.push(0);
    let nnz: usize = rows.iter().map(Vec::len).sum();
    let mut col_idx = Vec::with_capacity(nnz);
    let mut weights = Vec::with_capacity(nnz);
    for entries in rows {
        for (col, w) in entries {
            col_idx.push(col);
            weights.push(c(w));
        }
        row_ptr.push(col_idx.len());
    }
    Projector {
        n_rows,
        n_cols: grid.n_pixels(),
        row_ptr,
        col_idx,
        weights,
        grid: *grid,
        geometry: geometry.clone(),
    }
}

/// Build the sparse system matrix for `geometry` over `grid`.
///
/// Rays entirely outside the grid produce empty rows. Deterministic for
/// identical inputs.
pub fn build_projector<T: Scalar>(geometry: &ScanGeometry, grid: &ImageGrid) -> Projector<T> {
    let rows = (0..geometry.n_rays())
        .map(|r| {
            let (p0, u) = ray_for(geometry, r / geometry.n_detectors, r % geometry.n_detectors);
            trace_ray(grid, p0, u)
        })
        .collect();
    assemble(geometry, grid, rows)
}

/// Parallel row assembly. Per-row outputs are independent, so the result is
/// bit-identical to [`build_projector`] regardless of thread count.
pub fn build_projector_par<T: Scalar>(geometry: &ScanGeometry, grid: &ImageGrid) -> Projector<T> {
    let rows = (0..geometry.n_rays())
        .into_par_iter()
        .map(|r| {
            let (p0, u) = ray_for(geometry, r / geometry.n_detectors, r % geometry.n_detectors);
            trace_ray(grid, p0, u)
        })
        .collect();
    assemble(geometry, grid, rows)
}

/// `y = Kx`: exact sparse matrix-vector product.
pub fn forward_project<T: Scalar>(
    projector: &Projector<T>,
    x: &Image<T>,
) -> Result<Sinogram<T>, TomoError> {
    if x.len() != projector.n_cols {
        return Err(TomoError::DimensionMismatch {
            expected: format!("{} pixels", projector.n_cols),
            got: format!("{:?}", x.dims()),
        });
    }
    let xs = x.0.as_slice().expect("contiguous image");
    let geom = &projector.geometry;
    let mut y = Array2::zeros((geom.n_angles, geom.n_detectors));
    {
        let ys = y.as_slice_mut().expect("contiguous sinogram");
        for row in 0..projector.n_rows {
            let (cols, ws) = projector.row_entries(row);
            let mut acc = T::zero();
            for (&col, &w) in cols.iter().zip(ws) {
                acc = acc + w * xs[col as usize];
            }
            ys[row] = acc;
        }
    }
    Ok(Sinogram(y))
}

/// `x = K^T y`: adjoint of [`forward_project`] via the stored transpose.
pub fn back_project<T: Scalar>(
    projector: &Projector<T>,
    y: &Sinogram<T>,
) -> Result<Image<T>, TomoError> {
    if y.len() != projector.n_rows {
        return Err(TomoError::DimensionMismatch {
            expected: format!("{} rays", projector.n_rows),
            got: format!("{:?}", y.dims()),
        });
    }
    let ys = y.0.as_slice().expect("contiguous sinogram");
    let mut x = Array2::zeros(projector.grid.dims());
    {
        let xs = x.as_slice_mut().expect("contiguous image");
        for row in 0..projector.n_rows {
            let v = ys[row];
            let (cols, ws) = projector.row_entries(row);
            for (&col, &w) in cols.iter().zip(ws) {
                xs[col as usize] = xs[col as usize] + w * v;
            }
        }
    }
    Ok(Image(x))
}
