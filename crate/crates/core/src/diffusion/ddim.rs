//! Deterministic DDIM generation, inversion, and the generator VJP.
//!
//! Sampling walks the plan `tau_S = T > ... > tau_1 > tau_0 := 0`
//! descending. One step from `hi` to `lo`:
//!
//! ```text
//! eps   = f(x_hi, hi)
//! x0hat = (x_hi - sqrt(1 - a_hi) eps) / sqrt(a_hi)
//! x_lo  = sqrt(a_lo) x0hat + sqrt(1 - a_lo) eps
//! ```
//!
//! Inversion runs the same recurrence ascending with the lagged prediction
//! `eps = f(x_lo, lo)` evaluated at the previous state, exactly mirroring
//! the generation loop, so the two maps are mutual inverses whenever the
//! prediction is constant along a step (and near-inverses otherwise).

use super::{DiffusionError, DiffusionSchedule, StepPlan, ALPHA_FLOOR};
use crate::image::{Image, Latent};
use crate::nn::Denoiser;
use crate::scalar::{c, Scalar};

/// States (and denoiser tapes) recorded by one generator run.
///
/// `states[k]` holds the iterate at time `tau_k` of the augmented plan
/// `0 = tau_0 < tau_1 < ... < tau_S = T`, so `states[0]` is the generated
/// image and `states[S]` the latent. `tapes[i-1]` belongs to the prediction
/// evaluated at `(states[i], tau_i)`.
pub struct Trajectory<T, Tape> {
    pub states: Vec<Image<T>>,
    pub tapes: Vec<Tape>,
}

impl<T, Tape> Trajectory<T, Tape> {
    pub fn output(&self) -> &Image<T> {
        &self.states[0]
    }

    pub fn latent(&self) -> &Image<T> {
        self.states.last().expect("non-empty trajectory")
    }
}

fn checked_alpha<T: Scalar>(
    schedule: &DiffusionSchedule<T>,
    t: usize,
) -> Result<T, DiffusionError> {
    let alpha = schedule
        .alpha_checked(t)
        .ok_or(DiffusionError::BadTimestep { t, t_max: schedule.t_max() })?;
    if alpha < c::<T>(ALPHA_FLOOR) {
        return Err(DiffusionError::AlphaBelowFloor { t });
    }
    Ok(alpha)
}

fn validate_plan<T: Scalar>(
    schedule: &DiffusionSchedule<T>,
    plan: &StepPlan,
) -> Result<(), DiffusionError> {
    if *plan.taus().last().unwrap() != schedule.t_max() {
        return Err(DiffusionError::InvalidPlan(format!(
            "plan ends at {} but schedule has T={}",
            plan.taus().last().unwrap(),
            schedule.t_max()
        )));
    }
    Ok(())
}

/// Deterministic generation `G(z)`: map the latent to an image along the
/// plan, recording the trajectory.
pub fn ddim_sample<T: Scalar, D: Denoiser<T>>(
    denoiser: &D,
    z: &Latent<T>,
    schedule: &DiffusionSchedule<T>,
    plan: &StepPlan,
) -> Result<Trajectory<T, D::Tape>, DiffusionError> {
    validate_plan(schedule, plan)?;
    let s = plan.len();
    let mut states: Vec<Option<Image<T>>> = vec![None; s + 1];
    let mut tapes: Vec<Option<D::Tape>> = std::iter::repeat_with(|| None).take(s).collect();
    states[s] = Some(z.clone());

    for i in (1..=s).rev() {
        let t_hi = plan.taus()[i - 1];
        let t_lo = if i >= 2 { plan.taus()[i - 2] } else { 0 };
        let a_hi = checked_alpha(schedule, t_hi)?;
        let a_lo = checked_alpha(schedule, t_lo)?;
        let x_hi = states[i].as_ref().expect("state filled");
        let (eps, tape) = denoiser.predict(x_hi, t_hi)?;
        // x0hat = (x - sqrt(1 - a_hi) eps) / sqrt(a_hi)
        let mut x0hat = x_hi.clone();
        x0hat.scaled_add(-(T::one() - a_hi).sqrt(), &eps);
        let x0hat = x0hat.scale(T::one() / a_hi.sqrt());
        let mut x_lo = x0hat.scale(a_lo.sqrt());
        x_lo.scaled_add((T::one() - a_lo).sqrt(), &eps);
        states[i - 1] = Some(x_lo);
        tapes[i - 1] = Some(tape);
    }

    Ok(Trajectory {
        states: states.into_iter().map(|s| s.expect("filled")).collect(),
        tapes: tapes.into_iter().map(|t| t.expect("filled")).collect(),
    })
}

/// Deterministic DDIM inversion: lift an image to the latent whose
/// generation approximately reproduces it, using the lagged prediction
/// recurrence ascending over the plan.
pub fn ddim_invert<T: Scalar, D: Denoiser<T>>(
    denoiser: &D,
    x0: &Image<T>,
    schedule: &DiffusionSchedule<T>,
    plan: &StepPlan,
) -> Result<Latent<T>, DiffusionError> {
    validate_plan(schedule, plan)?;
    let mut x = x0.clone();
    let mut t_prev = 0usize;
    for &tau in plan.taus() {
        let a_prev = checked_alpha(schedule, t_prev)?;
        let a_next = checked_alpha(schedule, tau)?;
        let (eps, _) = denoiser.predict(&x, t_prev)?;
        let mut x0hat = x.clone();
        x0hat.scaled_add(-(T::one() - a_prev).sqrt(), &eps);
        let x0hat = x0hat.scale(T::one() / a_prev.sqrt());
        let mut x_next = x0hat.scale(a_next.sqrt());
        x_next.scaled_add((T::one() - a_next).sqrt(), &eps);
        x = x_next;
        t_prev = tau;
    }
    Ok(x)
}

/// `(dG/dz)^T v` evaluated on a recorded trajectory: traverse the chain in
/// reverse, combining each step's affine coefficients with the denoiser's
/// input VJP.
pub fn ddim_sample_vjp_traj<T: Scalar, D: Denoiser<T>>(
    denoiser: &D,
    schedule: &DiffusionSchedule<T>,
    plan: &StepPlan,
    trajectory: &Trajectory<T, D::Tape>,
    cotangent: &Image<T>,
) -> Result<Image<T>, DiffusionError> {
    validate_plan(schedule, plan)?;
    let s = plan.len();
    assert_eq!(trajectory.states.len(), s + 1, "trajectory matches plan");
    let mut v = cotangent.clone();
    for i in 1..=s {
        let t_hi = plan.taus()[i - 1];
        let t_lo = if i >= 2 { plan.taus()[i - 2] } else { 0 };
        let a_hi = checked_alpha(schedule, t_hi)?;
        let a_lo = checked_alpha(schedule, t_lo)?;
        // x_lo = a x_hi + b eps(x_hi):
        let a = (a_lo / a_hi).sqrt();
        let b = (T::one() - a_lo).sqrt() - (a_lo * (T::one() - a_hi) / a_hi).sqrt();
        let pulled = denoiser.vjp_input(&trajectory.tapes[i - 1], &v.scale(b))?;
        let mut next = v.scale(a);
        next.scaled_add(T::one(), &pulled);
        v = next;
    }
    Ok(v)
}

/// `(dG/dz)^T v` from scratch: run the generator, then pull back.
pub fn ddim_sample_vjp<T: Scalar, D: Denoiser<T>>(
    denoiser: &D,
    z: &Latent<T>,
    schedule: &DiffusionSchedule<T>,
    plan: &StepPlan,
    cotangent: &Image<T>,
) -> Result<Image<T>, DiffusionError> {
    let trajectory = ddim_sample(denoiser, z, schedule, plan)?;
    ddim_sample_vjp_traj(denoiser, schedule, plan, &trajectory, cotangent)
}
