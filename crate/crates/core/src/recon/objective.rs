//! The latent objective, its decomposed terms, and its exact gradient.
//!
//! The generator output `g = G(z)` lives in the model domain `[-1, 1]`; it
//! is clipped and mapped to `[0, 1]` before the forward operator is applied
//! (the clip inside `denormalize`), while the TV regularizer acts on `g`
//! directly. The clip uses a pass-through subgradient, so the gradient
//! returned here is exact for the objective as implemented everywhere the
//! clip is inactive.

use super::{ObjectiveConfig, ReconError};
use crate::diffusion::{
    clip_mask, ddim_sample, ddim_sample_vjp_traj, denormalize, DiffusionSchedule, Trajectory,
};
use crate::image::{Image, Latent, Sinogram};
use crate::nn::Denoiser;
use crate::scalar::{c, Scalar};
use crate::tomo::{back_project, forward_project, Projector};

/// Decomposed objective value. `tikhonov` and `tv` carry their lambda
/// factors, so `total = fidelity + tikhonov + tv` exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveTerms<T> {
    pub fidelity: T,
    pub tikhonov: T,
    pub tv: T,
    pub total: T,
}

/// Squared-norm latent prior: value `sum z_i^2`, gradient `2 z`.
pub fn tikhonov<T: Scalar>(z: &Latent<T>) -> (T, Image<T>) {
    (z.norm_sq(), z.scale(c(2.0)))
}

/// Smoothed total variation with forward differences and Neumann boundary:
/// `sum_ij (sqrt(dh^2 + dv^2 + beta^2) - beta)`. Zero exactly on constant
/// images; the gradient is analytic.
pub fn tv_smooth<T: Scalar>(x: &Image<T>, beta: T) -> (T, Image<T>) {
    let (h, w) = x.dims();
    let beta2 = beta * beta;
    let mut value = T::zero();
    // Magnitudes s_ij are reused by the gradient; dh/dv vanish on the last
    // column/row respectively.
    let dh = |r: usize, col: usize| {
        if col + 1 < w {
            x.0[[r, col + 1]] - x.0[[r, col]]
        } else {
            T::zero()
        }
    };
    let dv = |r: usize, col: usize| {
        if r + 1 < h {
            x.0[[r + 1, col]] - x.0[[r, col]]
        } else {
            T::zero()
        }
    };
    let mut mag = Image::<T>::zeros((h, w));
    for r in 0..h {
        for col in 0..w {
            let a = dh(r, col);
            let b = dv(r, col);
            let s = (a * a + b * b + beta2).sqrt();
            mag.0[[r, col]] = s;
            value = value + s - beta;
        }
    }
    let mut grad = Image::<T>::zeros((h, w));
    for r in 0..h {
        for col in 0..w {
            let mut g = -(dh(r, col) + dv(r, col)) / mag.0[[r, col]];
            if col > 0 {
                g = g + dh(r, col - 1) / mag.0[[r, col - 1]];
            }
            if r > 0 {
                g = g + dv(r - 1, col) / mag.0[[r - 1, col]];
            }
            grad.0[[r, col]] = g;
        }
    }
    (value, grad)
}

struct Evaluation<T, Tape> {
    terms: ObjectiveTerms<T>,
    trajectory: Trajectory<T, Tape>,
    residual: Sinogram<T>,
    tv_grad: Image<T>,
}

fn evaluate<T: Scalar, D: Denoiser<T>>(
    z: &Latent<T>,
    y: &Sinogram<T>,
    projector: &Projector<T>,
    denoiser: &D,
    schedule: &DiffusionSchedule<T>,
    config: &ObjectiveConfig<T>,
) -> Result<Evaluation<T, D::Tape>, ReconError> {
    config.validate()?;
    let trajectory = ddim_sample(denoiser, z, schedule, &config.plan)?;
    let g = trajectory.output();
    let x = denormalize(g);
    let residual = forward_project(projector, &x)?.sub(y);
    let fidelity = c::<T>(0.5) * residual.norm_sq();
    let tik = config.lambda1 * z.norm_sq();
    let (tv_raw, tv_grad) = tv_smooth(g, config.tv_beta);
    let tv = config.lambda2 * tv_raw;
    let total = fidelity + tik + tv;
    if !total.is_finite() {
        return Err(ReconError::NonFiniteValue(format!(
            "objective terms: fidelity {fidelity}, tikhonov {tik}, tv {tv}"
        )));
    }
    Ok(Evaluation {
        terms: ObjectiveTerms { fidelity, tikhonov: tik, tv, total },
        trajectory,
        residual,
        tv_grad,
    })
}

/// Objective value `F(z; y)`.
pub fn objective<T: Scalar, D: Denoiser<T>>(
    z: &Latent<T>,
    y: &Sinogram<T>,
    projector: &Projector<T>,
    denoiser: &D,
    schedule: &DiffusionSchedule<T>,
    config: &ObjectiveConfig<T>,
) -> Result<T, ReconError> {
    Ok(evaluate(z, y, projector, denoiser, schedule, config)?.terms.total)
}

/// Decomposed objective terms and the exact gradient in one evaluation.
///
/// The gradient is `(dG/dz)^T [ 1/2 mask K^T (K x - y) + lambda2 grad_TV(g) ]
/// + 2 lambda1 z`, where `1/2 mask` is the chain of `denormalize` with its
/// pass-through clip subgradient.
pub fn objective_terms_and_grad<T: Scalar, D: Denoiser<T>>(
    z: &Latent<T>,
    y: &Sinogram<T>,
    projector: &Projector<T>,
    denoiser: &D,
    schedule: &DiffusionSchedule<T>,
    config: &ObjectiveConfig<T>,
) -> Result<(ObjectiveTerms<T>, Image<T>), ReconError> {
    let ev = evaluate(z, y, projector, denoiser, schedule, config)?;
    let g = ev.trajectory.output();
    let mask = clip_mask(g);
    let back = back_project(projector, &ev.residual)?;
    let half = c::<T>(0.5);
    let cot = Image::from_fn(g.dims(), |idx| {
        half * mask.0[idx] * back.0[idx] + config.lambda2 * ev.tv_grad.0[idx]
    });
    let pulled = ddim_sample_vjp_traj(denoiser, schedule, &config.plan, &ev.trajectory, &cot)?;
    let mut grad = pulled;
    grad.scaled_add(c::<T>(2.0) * config.lambda1, z);
    Ok((ev.terms, grad))
}

/// Gradient of the objective alone.
pub fn objective_grad<T: Scalar, D: Denoiser<T>>(
    z: &Latent<T>,
    y: &Sinogram<T>,
    projector: &Projector<T>,
    denoiser: &D,
    schedule: &DiffusionSchedule<T>,
    config: &ObjectiveConfig<T>,
) -> Result<Image<T>, ReconError> {
    Ok(objective_terms_and_grad(z, y, projector, denoiser, schedule, config)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{cosine_noise_schedule, normalize, StepPlan};
    use crate::nn::ZeroDenoiser;
    use crate::tomo::{build_projector, ImageGrid, ScanGeometry};

    #[test]
    fn tikhonov_values() {
        let zero = Image::<f64>::zeros((3, 3));
        let (v, g) = tikhonov(&zero);
        assert_eq!(v, 0.0);
        assert!(g.0.iter().all(|&x| x == 0.0));

        let ones = Image::<f64>::constant((3, 3), 1.0);
        let (v, g) = tikhonov(&ones);
        assert_eq!(v, 9.0);
        assert!(g.0.iter().all(|&x| x == 2.0));

        // Quadratic: analytic gradient matches FD essentially exactly.
        let z = Image::<f64>::standard_normal((3, 3), 1);
        let (_, g) = tikhonov(&z);
        let d = Image::<f64>::standard_normal((3, 3), 2);
        let h = 1e-6;
        let mut zp = z.clone();
        zp.scaled_add(h, &d);
        let mut zm = z.clone();
        zm.scaled_add(-h, &d);
        let fd = (tikhonov(&zp).0 - tikhonov(&zm).0) / (2.0 * h);
        let an = g.dot(&d);
        assert!((fd - an).abs() <= 1e-10 * an.abs().max(1.0));
    }

    #[test]
    fn tv_constant_image_is_zero() {
        let x = Image::<f64>::constant((5, 7), 0.42);
        let (v, g) = tv_smooth(&x, 1e-3);
        assert_eq!(v, 0.0);
        assert!(g.0.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn tv_two_by_two_beta_limit() {
        // [[0, 1], [0, 1]] has two unit horizontal jumps; as beta -> 0 the
        // value approaches 2.
        let x: Image<f64> = Image(ndarray::array![[0.0, 1.0], [0.0, 1.0]]);
        let (v, _) = tv_smooth(&x, 1e-9);
        assert!((v - 2.0).abs() < 1e-6, "value {v}");
    }

    #[test]
    fn tv_gradient_matches_fd() {
        let x = Image::<f64>::standard_normal((8, 8), 3).scale(0.3);
        let beta = 1e-3;
        let (_, grad) = tv_smooth(&x, beta);
        let d = Image::<f64>::standard_normal((8, 8), 4);
        let h = 1e-7;
        let mut xp = x.clone();
        xp.scaled_add(h, &d);
        let mut xm = x.clone();
        xm.scaled_add(-h, &d);
        let fd = (tv_smooth(&xp, beta).0 - tv_smooth(&xm, beta).0) / (2.0 * h);
        let an = grad.dot(&d);
        assert!(
            (fd - an).abs() <= 1e-6 * an.abs().max(1.0),
            "fd {fd} vs analytic {an}"
        );
    }

    fn zero_denoiser_setup() -> (
        ImageGrid,
        Projector<f64>,
        DiffusionSchedule<f64>,
        ObjectiveConfig<f64>,
    ) {
        let grid = ImageGrid::square(8).unwrap();
        let geom = ScanGeometry::parallel(6, 13, 1.0).unwrap();
        let proj = build_projector::<f64>(&geom, &grid);
        let sched = cosine_noise_schedule::<f64>(32);
        let plan = StepPlan::uniform(32, 4).unwrap();
        let cfg = ObjectiveConfig::new(plan);
        (grid, proj, sched, cfg)
    }

    #[test]
    fn perfect_data_zero_lambdas_gives_zero_objective() {
        let (grid, proj, sched, mut cfg) = zero_denoiser_setup();
        cfg.lambda1 = 0.0;
        cfg.lambda2 = 0.0;
        // Choose z so that G(z) stays strictly inside (-1, 1): under the
        // zero denoiser G(z) = z / sqrt(alpha_T).
        let target = Image::<f64>::from_fn(grid.dims(), |(r, c_)| {
            0.2 + 0.05 * ((r + c_) % 3) as f64
        });
        let z = normalize(&target).scale(sched.alpha(32).sqrt());
        let traj = ddim_sample(&ZeroDenoiser, &z, &sched, &cfg.plan).unwrap();
        let x = denormalize(traj.output());
        let y = forward_project(&proj, &x).unwrap();
        let f = objective(&z, &y, &proj, &ZeroDenoiser, &sched, &cfg).unwrap();
        assert!(f.abs() < 1e-18, "objective {f}");
    }

    #[test]
    fn pure_tikhonov_objective_and_gradient() {
        let (grid, proj, sched, mut cfg) = zero_denoiser_setup();
        cfg.lambda2 = 0.0;
        cfg.lambda1 = 0.3;
        let target = Image::<f64>::constant(grid.dims(), 0.5);
        let z = normalize(&target).scale(sched.alpha(32).sqrt()); // z = 0 actually
        assert!(z.norm_sq() < 1e-30);
        // Data term vanishes at z (y matches), so F = lambda1 ||z||^2 = 0
        // and grad = 2 lambda1 z = 0.
        let traj = ddim_sample(&ZeroDenoiser, &z, &sched, &cfg.plan).unwrap();
        let y = forward_project(&proj, &denormalize(traj.output())).unwrap();
        let (terms, grad) =
            objective_terms_and_grad(&z, &y, &proj, &ZeroDenoiser, &sched, &cfg).unwrap();
        assert!(terms.total.abs() < 1e-18);
        assert!(grad.max_abs() < 1e-12);

        // Move z: with flat data manifold here the tikhonov part dominates.
        let z2 = Image::<f64>::constant(grid.dims(), 1e-3);
        let (terms2, _) =
            objective_terms_and_grad(&z2, &y, &proj, &ZeroDenoiser, &sched, &cfg).unwrap();
        assert!((terms2.tikhonov - 0.3 * z2.norm_sq()).abs() < 1e-15);
    }

    #[test]
    fn objective_matches_dense_reference() {
        // Independent brute-force evaluation: build the dense K, evaluate
        // every term from scratch.
        let (grid, proj, sched, cfg) = zero_denoiser_setup();
        let z = Image::<f64>::standard_normal(grid.dims(), 5)
            .scale(0.4 * sched.alpha(32).sqrt());
        let y = Sinogram::<f64>::standard_normal(6, 13, 6);

        let f = objective(&z, &y, &proj, &ZeroDenoiser, &sched, &cfg).unwrap();

        // Reference: G(z) = z / sqrt(alpha_T) (zero denoiser), then clip,
        // denormalize, dense matvec, explicit TV sum.
        let scale = 1.0 / sched.alpha(32).sqrt();
        let g: Vec<f64> = z.0.iter().map(|&v| v * scale).collect();
        let x: Vec<f64> = g
            .iter()
            .map(|&v| 0.5 * (v.clamp(-1.0, 1.0) + 1.0))
            .collect();
        // Dense K via single-pixel probes.
        let (hh, ww) = grid.dims();
        let mut kx = vec![0.0; y.len()];
        for p in 0..hh * ww {
            let mut e = Image::<f64>::zeros(grid.dims());
            e.0.as_slice_mut().unwrap()[p] = 1.0;
            let col = forward_project(&proj, &e).unwrap();
            for (ki, &cv) in kx.iter_mut().zip(col.0.as_slice().unwrap()) {
                *ki += cv * x[p];
            }
        }
        let mut fid = 0.0;
        for (a, b) in kx.iter().zip(y.0.as_slice().unwrap()) {
            fid += (a - b) * (a - b);
        }
        fid *= 0.5;
        let tik: f64 = cfg.lambda1 * z.0.iter().map(|v| v * v).sum::<f64>();
        let beta = cfg.tv_beta;
        let mut tv = 0.0;
        for r in 0..hh {
            for col in 0..ww {
                let cur = g[r * ww + col];
                let dh = if col + 1 < ww { g[r * ww + col + 1] - cur } else { 0.0 };
                let dv = if r + 1 < hh { g[(r + 1) * ww + col] - cur } else { 0.0 };
                tv += (dh * dh + dv * dv + beta * beta).sqrt() - beta;
            }
        }
        let reference = fid + tik + cfg.lambda2 * tv;
        assert!(
            (f - reference).abs() <= 1e-10 * reference.abs().max(1.0),
            "{f} vs {reference}"
        );
    }

    #[test]
    fn data_cotangent_linear_in_residual() {
        // Doubling the residual doubles the data-term gradient component.
        let (grid, proj, sched, mut cfg) = zero_denoiser_setup();
        cfg.lambda1 = 0.0;
        cfg.lambda2 = 0.0;
        let z = Image::<f64>::standard_normal(grid.dims(), 7)
            .scale(0.3 * sched.alpha(32).sqrt());
        let traj = ddim_sample(&ZeroDenoiser, &z, &sched, &cfg.plan).unwrap();
        let y_match = forward_project(&proj, &denormalize(traj.output())).unwrap();
        let dy = Sinogram::<f64>::standard_normal(6, 13, 8);
        let y1 = y_match.sub(&dy);
        let y2 = y_match.sub(&Sinogram(dy.0.mapv(|v| 2.0 * v)));
        let g1 = objective_grad(&z, &y1, &proj, &ZeroDenoiser, &sched, &cfg).unwrap();
        let g2 = objective_grad(&z, &y2, &proj, &ZeroDenoiser, &sched, &cfg).unwrap();
        for (a, b) in g1.0.iter().zip(g2.0.iter()) {
            assert!((b - 2.0 * a).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}
