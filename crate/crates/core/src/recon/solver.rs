//! The reconstruction loop: initialization, the fixed-budget Adam descent
//! over the latent, and the traces needed for the ablation study.

use std::time::{Duration, Instant};

use super::objective::objective_terms_and_grad;
use super::{adam_step, cosine_lr, AdamState, ObjectiveConfig, ReconError};
use crate::diffusion::{ddim_invert, ddim_sample, denormalize, normalize, DiffusionSchedule, StepPlan};
use crate::image::{Image, Latent, Sinogram};
use crate::nn::Denoiser;
use crate::scalar::Scalar;
use crate::tomo::{fbp, ImageGrid, Projector, ScanGeometry};

/// Latent initialization strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// DDIM inversion of the (normalized) FBP reconstruction.
    Fbp,
    /// Standard normal draw.
    Random,
}

/// Step-size strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrMode {
    /// Cosine annealing from `nu_max` to `nu_min`.
    Cosine,
    /// Fixed `nu = nu_max` (isolates the annealing in ablations).
    Constant,
}

impl InitMode {
    pub fn label(&self) -> &'static str {
        match self {
            InitMode::Fbp => "fbp",
            InitMode::Random => "random",
        }
    }
}

impl LrMode {
    pub fn label(&self) -> &'static str {
        match self {
            LrMode::Cosine => "cosine",
            LrMode::Constant => "constant",
        }
    }
}

/// One iteration record: step size and the decomposed objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub lr: f64,
    pub fidelity: f64,
    pub tikhonov: f64,
    pub tv: f64,
    pub total: f64,
}

/// Reconstruction output: the image, its latent, and per-iteration traces.
/// `x_star = denormalize(G(z_star))` by construction.
#[derive(Clone, Debug)]
pub struct ReconstructionResult<T> {
    pub x_star: Image<T>,
    pub z_star: Latent<T>,
    pub trace: Vec<TraceRow>,
    pub wall_time: Duration,
}

/// Physics-informed initialization: FBP the sinogram, normalize, and run
/// deterministic DDIM inversion under the same schedule.
pub fn init_latent_fbp<T: Scalar, D: Denoiser<T>>(
    y: &Sinogram<T>,
    geometry: &ScanGeometry,
    grid: &ImageGrid,
    denoiser: &D,
    schedule: &DiffusionSchedule<T>,
    plan: &StepPlan,
) -> Result<Latent<T>, ReconError> {
    let coarse = fbp(geometry, grid, y)?;
    Ok(ddim_invert(denoiser, &normalize(&coarse), schedule, plan)?)
}

/// Seeded standard normal latent.
pub fn init_latent_random<T: Scalar>(grid: &ImageGrid, seed: u64) -> Latent<T> {
    Image::standard_normal(grid.dims(), seed)
}

/// Run the full reconstruction: `maxit` Adam iterations on the latent
/// objective, recording step size and decomposed objective per iteration.
///
/// Deterministic given identical inputs and `init_seed` (the seed is only
/// consumed by [`InitMode::Random`]).
#[allow(clippy::too_many_arguments)]
pub fn reconstruct<T: Scalar, D: Denoiser<T>>(
    y: &Sinogram<T>,
    projector: &Projector<T>,
    denoiser: &D,
    schedule: &DiffusionSchedule<T>,
    config: &ObjectiveConfig<T>,
    init_mode: InitMode,
    lr_mode: LrMode,
    init_seed: u64,
) -> Result<ReconstructionResult<T>, ReconError> {
    config.validate()?;
    let start = Instant::now();
    let mut z = match init_mode {
        InitMode::Fbp => init_latent_fbp(
            y,
            &projector.geometry,
            &projector.grid,
            denoiser,
            schedule,
            &config.plan,
        )?,
        InitMode::Random => init_latent_random(&projector.grid, init_seed),
    };

    let mut adam = AdamState::new(z.dims());
    let mut trace: Vec<TraceRow> = Vec::with_capacity(config.maxit);
    for k in 0..config.maxit {
        let evaluated = objective_terms_and_grad(&z, y, projector, denoiser, schedule, config);
        let (terms, grad) = match evaluated {
            Ok(v) => v,
            Err(ReconError::NonFiniteValue(_)) => {
                return Err(ReconError::NonFiniteObjective { iteration: k, partial_trace: trace })
            }
            Err(e) => return Err(e),
        };
        let nu = match lr_mode {
            LrMode::Cosine => cosine_lr(k, config.maxit, config.nu_min, config.nu_max),
            LrMode::Constant => config.nu_max,
        };
        trace.push(TraceRow {
            iteration: k,
            lr: nu.to_f64().expect("finite"),
            fidelity: terms.fidelity.to_f64().expect("finite"),
            tikhonov: terms.tikhonov.to_f64().expect("finite"),
            tv: terms.tv.to_f64().expect("finite"),
            total: terms.total.to_f64().expect("finite"),
        });
        let (z_next, adam_next) = adam_step(adam, &z, &grad, nu);
        z = z_next;
        adam = adam_next;
    }

    let final_traj = ddim_sample(denoiser, &z, schedule, &config.plan)?;
    let x_star = denormalize(final_traj.output());
    Ok(ReconstructionResult { x_star, z_star: z, trace, wall_time: start.elapsed() })
}
