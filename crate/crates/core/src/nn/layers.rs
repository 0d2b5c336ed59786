//! Layer primitives: 3x3 convolution (stride 1 or 2, zero padding 1),
//! group normalization, exact-erf GELU, and nearest-neighbor 2x upsampling.
//! Each primitive has a hand-derived backward pass; the group-norm backward
//! is analytic, not finite-difference based.

use ndarray::Array3;

use crate::scalar::{c, cu, Scalar};

pub const KERNEL: usize = 3;
pub const PAD: i64 = 1;
pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Output spatial size of a padded 3x3 convolution.
pub fn conv_out_dim(n: usize, stride: usize) -> usize {
    (n + 2 * PAD as usize - KERNEL) / stride + 1
}

/// Valid output index range `[lo, hi)` such that the input index
/// `o * stride + k - PAD` stays inside `[0, n_in)`.
#[inline]
fn valid_range(n_in: usize, n_out: usize, k: usize, stride: usize) -> (usize, usize) {
    let k = k as i64;
    let s = stride as i64;
    let lo = (PAD - k + s - 1).div_euclid(s).max(0);
    let hi = (((n_in as i64 - 1) - k + PAD).div_euclid(s) + 1).clamp(0, n_out as i64);
    (lo as usize, hi.max(lo) as usize)
}

/// `out[oc] = b[oc] + sum_ic conv(in[ic], w[oc, ic])`.
pub fn conv2d_forward<T: Scalar>(
    input: &Array3<T>,
    weights: &[T],
    bias: &[T],
    c_out: usize,
    stride: usize,
) -> Array3<T> {
    let (c_in, h, w) = input.dim();
    let (ho, wo) = (conv_out_dim(h, stride), conv_out_dim(w, stride));
    debug_assert_eq!(weights.len(), c_out * c_in * KERNEL * KERNEL);
    debug_assert_eq!(bias.len(), c_out);

    let xs = input.as_slice().expect("contiguous input");
    let mut out = Array3::from_shape_fn((c_out, ho, wo), |(oc, _, _)| bias[oc]);
    {
        let os = out.as_slice_mut().expect("contiguous output");
        for oc in 0..c_out {
            for ic in 0..c_in {
                let in_plane = &xs[ic * h * w..(ic + 1) * h * w];
                for ky in 0..KERNEL {
                    let (oy_lo, oy_hi) = valid_range(h, ho, ky, stride);
                    for kx in 0..KERNEL {
                        let wgt = weights[((oc * c_in + ic) * KERNEL + ky) * KERNEL + kx];
                        let (ox_lo, ox_hi) = valid_range(w, wo, kx, stride);
                        for oy in oy_lo..oy_hi {
                            let iy = (oy * stride + ky) as i64 - PAD;
                            let in_row = &in_plane[iy as usize * w..];
                            let out_row = &mut os[oc * ho * wo + oy * wo..];
                            for ox in ox_lo..ox_hi {
                                let ix = ((ox * stride + kx) as i64 - PAD) as usize;
                                out_row[ox] = out_row[ox] + wgt * in_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Cotangent with respect to the convolution input.
pub fn conv2d_backward_input<T: Scalar>(
    cot: &Array3<T>,
    weights: &[T],
    c_in: usize,
    in_dims: (usize, usize),
    stride: usize,
) -> Array3<T> {
    let (c_out, ho, wo) = cot.dim();
    let (h, w) = in_dims;
    let cs = cot.as_slice().expect("contiguous cotangent");
    let mut grad = Array3::zeros((c_in, h, w));
    {
        let gs = grad.as_slice_mut().expect("contiguous gradient");
        for oc in 0..c_out {
            for ic in 0..c_in {
                let g_plane = &mut gs[ic * h * w..(ic + 1) * h * w];
                for ky in 0..KERNEL {
                    let (oy_lo, oy_hi) = valid_range(h, ho, ky, stride);
                    for kx in 0..KERNEL {
                        let wgt = weights[((oc * c_in + ic) * KERNEL + ky) * KERNEL + kx];
                        let (ox_lo, ox_hi) = valid_range(w, wo, kx, stride);
                        for oy in oy_lo..oy_hi {
                            let iy = ((oy * stride + ky) as i64 - PAD) as usize;
                            let cot_row = &cs[oc * ho * wo + oy * wo..];
                            let g_row = &mut g_plane[iy * w..];
                            for ox in ox_lo..ox_hi {
                                let ix = ((ox * stride + kx) as i64 - PAD) as usize;
                                g_row[ix] = g_row[ix] + wgt * cot_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    grad
}

/// Accumulate weight and bias gradients into `w_grad` / `b_grad`.
pub fn conv2d_backward_params<T: Scalar>(
    cot: &Array3<T>,
    input: &Array3<T>,
    stride: usize,
    w_grad: &mut [T],
    b_grad: &mut [T],
) {
    let (c_out, ho, wo) = cot.dim();
    let (c_in, h, w) = input.dim();
    let cs = cot.as_slice().expect("contiguous cotangent");
    let xs = input.as_slice().expect("contiguous input");
    for oc in 0..c_out {
        let cot_plane = &cs[oc * ho * wo..(oc + 1) * ho * wo];
        b_grad[oc] = b_grad[oc] + cot_plane.iter().copied().sum::<T>();
        for ic in 0..c_in {
            let in_plane = &xs[ic * h * w..(ic + 1) * h * w];
            for ky in 0..KERNEL {
                let (oy_lo, oy_hi) = valid_range(h, ho, ky, stride);
                for kx in 0..KERNEL {
                    let (ox_lo, ox_hi) = valid_range(w, wo, kx, stride);
                    let mut acc = T::zero();
                    for oy in oy_lo..oy_hi {
                        let iy = ((oy * stride + ky) as i64 - PAD) as usize;
                        let in_row = &in_plane[iy * w..];
                        let cot_row = &cot_plane[oy * wo..];
                        for ox in ox_lo..ox_hi {
                            let ix = ((ox * stride + kx) as i64 - PAD) as usize;
                            acc = acc + cot_row[ox] * in_row[ix];
                        }
                    }
                    let idx = ((oc * c_in + ic) * KERNEL + ky) * KERNEL + kx;
                    w_grad[idx] = w_grad[idx] + acc;
                }
            }
        }
    }
}

/// Per-group statistics cached by the group-norm forward pass.
#[derive(Clone, Debug)]
pub struct GnStats<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Group normalization with learnable per-channel gain and bias.
pub fn group_norm_forward<T: Scalar>(
    input: &Array3<T>,
    gamma: &[T],
    beta: &[T],
    groups: usize,
) -> (Array3<T>, GnStats<T>) {
    let (ch, h, w) = input.dim();
    debug_assert_eq!(ch % groups, 0);
    let cpg = ch / groups;
    let group_len = cpg * h * w;
    let xs = input.as_slice().expect("contiguous input");
    let eps = c::<T>(GROUP_NORM_EPS);

    let mut mean = Vec::with_capacity(groups);
    let mut inv_std = Vec::with_capacity(groups);
    let mut out = Array3::zeros((ch, h, w));
    {
        let os = out.as_slice_mut().expect("contiguous output");
        for g in 0..groups {
            let span = &xs[g * group_len..(g + 1) * group_len];
            let m: T = span.iter().copied().sum::<T>() / cu(group_len);
            let var: T = span.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / cu(group_len);
            let istd = T::one() / (var + eps).sqrt();
            mean.push(m);
            inv_std.push(istd);
            for lc in 0..cpg {
                let ch_idx = g * cpg + lc;
                let (ga, be) = (gamma[ch_idx], beta[ch_idx]);
                let base = ch_idx * h * w;
                for p in 0..h * w {
                    os[base + p] = ga * (xs[base + p] - m) * istd + be;
                }
            }
        }
    }
    (out, GnStats { mean, inv_std })
}

/// Analytic group-norm backward. Returns the input cotangent and
/// accumulates gain/bias gradients.
pub fn group_norm_backward<T: Scalar>(
    cot: &Array3<T>,
    input: &Array3<T>,
    stats: &GnStats<T>,
    gamma: &[T],
    groups: usize,
    gamma_grad: &mut [T],
    beta_grad: &mut [T],
) -> Array3<T> {
    let (ch, h, w) = input.dim();
    let cpg = ch / groups;
    let group_len = cpg * h * w;
    let xs = input.as_slice().expect("contiguous");
    let cs = cot.as_slice().expect("contiguous");
    let mut grad = Array3::zeros((ch, h, w));
    {
        let gs = grad.as_slice_mut().expect("contiguous");
        for g in 0..groups {
            let m = stats.mean[g];
            let istd = stats.inv_std[g];
            // dL/dxhat, plus the two group-wide reductions the chain rule needs.
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for lc in 0..cpg {
                let ch_idx = g * cpg + lc;
                let base = ch_idx * h * w;
                let ga = gamma[ch_idx];
                for p in 0..h * w {
                    let xhat = (xs[base + p] - m) * istd;
                    let co = cs[base + p];
                    gamma_grad[ch_idx] = gamma_grad[ch_idx] + co * xhat;
                    beta_grad[ch_idx] = beta_grad[ch_idx] + co;
                    let dxhat = co * ga;
                    sum_dxhat = sum_dxhat + dxhat;
                    sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                }
            }
            let inv_n = T::one() / cu::<T>(group_len);
            for lc in 0..cpg {
                let ch_idx = g * cpg + lc;
                let base = ch_idx * h * w;
                let ga = gamma[ch_idx];
                for p in 0..h * w {
                    let xhat = (xs[base + p] - m) * istd;
                    let dxhat = cs[base + p] * ga;
                    gs[base + p] =
                        istd * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
                }
            }
        }
    }
    grad
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU: `0.5 x (1 + erf(x / sqrt(2)))`.
pub fn gelu_forward<T: Scalar>(input: &Array3<T>) -> Array3<T> {
    let half = c::<T>(0.5);
    let inv_sqrt2 = c::<T>(FRAC_1_SQRT_2);
    input.mapv(|x| half * x * (T::one() + (x * inv_sqrt2).erf()))
}

/// GELU backward: `Phi(x) + x phi(x)` with the standard normal CDF/PDF.
pub fn gelu_backward<T: Scalar>(cot: &Array3<T>, input: &Array3<T>) -> Array3<T> {
    let half = c::<T>(0.5);
    let inv_sqrt2 = c::<T>(FRAC_1_SQRT_2);
    let inv_sqrt_2pi = c::<T>(INV_SQRT_2PI);
    let mut out = cot.clone();
    out.zip_mut_with(input, |co, &x| {
        let cdf = half * (T::one() + (x * inv_sqrt2).erf());
        let pdf = inv_sqrt_2pi * (-half * x * x).exp();
        *co = *co * (cdf + x * pdf);
    });
    out
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2x_forward<T: Scalar>(input: &Array3<T>) -> Array3<T> {
    let (ch, h, w) = input.dim();
    Array3::from_shape_fn((ch, 2 * h, 2 * w), |(ci, y, x)| input[[ci, y / 2, x / 2]])
}

/// Upsampling backward: each input cell collects its 2x2 output block.
pub fn upsample2x_backward<T: Scalar>(cot: &Array3<T>) -> Array3<T> {
    let (ch, h2, w2) = cot.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut grad = Array3::zeros((ch, h, w));
    for ci in 0..ch {
        for y in 0..h2 {
            for x in 0..w2 {
                grad[[ci, y / 2, x / 2]] = grad[[ci, y / 2, x / 2]] + cot[[ci, y, x]];
            }
        }
    }
    grad
}
