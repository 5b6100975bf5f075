//! Closed-loop experiments: model construction, design, verification and
//! seeded simulation.
//!
//! Random streams: every run uses `ChaCha8Rng::seed_from_u64(seed)`.
//! Stream 0 drives the closed-loop simulation (per step: controller
//! noise, then plant disturbance); stream 1 drives identification data
//! collection. ChaCha8 and the ziggurat normal sampler of `rand_distr`
//! are platform independent, so outputs are reproducible everywhere.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::controllability::{stochastic_ctrb_verdict, ControllabilityReport};
use crate::error::{Error, Result};
use crate::fpd::{design, GainSolution, RandomizedController, RiccatiOptions};
use crate::lattice::LatticeParams;
use crate::linalg::symmetrize;
use crate::linearize::LinearModel;
use crate::plant::{is_diverged, Plant};
use crate::sysid::{excite_and_collect, fit_linear_model, FittedModel, SigmaMode, WhiteNoiseExcitation};

pub const SIMULATION_STREAM: u64 = 0;
pub const IDENTIFICATION_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantKind {
    Nonlinear,
    Linearized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSource {
    Analytic,
    Identified,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub lattice: LatticeParams,
    pub plant_kind: PlantKind,
    /// Covariance of the disturbance acting on the plant.
    pub noise_cov: DMatrix<f64>,
    /// Covariance `Σ` used by the analytic design model; defaults to `noise_cov`.
    pub design_sigma: Option<DMatrix<f64>>,
    pub gamma: DMatrix<f64>,
    /// Initial deviation `x_0 = z_0 - z*`.
    pub x0: DVector<f64>,
    pub steps: usize,
    pub seed: u64,
    pub model_source: ModelSource,
    pub sysid_samples: usize,
    pub excitation: WhiteNoiseExcitation,
    pub sigma_mode: SigmaMode,
    /// Apply `u = C x` without the randomizing term.
    pub deterministic_control: bool,
    pub riccati: RiccatiOptions,
    pub ctrb_horizon: usize,
    pub bound_tol: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let l = self.lattice.len();
        let m = self.lattice.num_pins();
        if self.steps == 0 {
            return Err(Error::InvalidParams("steps must be at least 1".into()));
        }
        if self.noise_cov.shape() != (l, l) {
            return Err(Error::dims("noise covariance", format!("{l}x{l}"), format!("{:?}", self.noise_cov.shape())));
        }
        if let Some(s) = &self.design_sigma {
            if s.shape() != (l, l) {
                return Err(Error::dims("design sigma", format!("{l}x{l}"), format!("{:?}", s.shape())));
            }
        }
        if self.gamma.shape() != (m, m) {
            return Err(Error::dims("gamma", format!("{m}x{m}"), format!("{:?}", self.gamma.shape())));
        }
        if self.x0.len() != l {
            return Err(Error::dims("x0", l, self.x0.len()));
        }
        if self.model_source == ModelSource::Identified && self.sysid_samples < l + m {
            return Err(Error::Identifiability(format!(
                "{} identification samples for {} regressors",
                self.sysid_samples,
                l + m
            )));
        }
        Ok(())
    }

    pub fn plant(&self) -> Result<Plant> {
        match self.plant_kind {
            PlantKind::Nonlinear => Plant::nonlinear(&self.lattice, &self.noise_cov),
            PlantKind::Linearized => Plant::linearized(&self.lattice, &self.noise_cov),
        }
    }

    /// Analytic linearization with the design covariance.
    pub fn analytic_model(&self) -> Result<LinearModel> {
        let sigma = self.design_sigma.clone().unwrap_or_else(|| self.noise_cov.clone());
        LinearModel::from_lattice(&self.lattice, sigma)
    }
}

/// Time histories of one closed-loop run; row `t` holds time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: DMatrix<f64>,
    pub controls: DMatrix<f64>,
    pub noises: DMatrix<f64>,
    /// `‖x_t‖∞` for every recorded state.
    pub sync_error: Vec<f64>,
    /// First step whose state left the divergence bound; the histories
    /// stop there.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.controls.nrows()
    }

    /// `sup_{t >= from} ‖x_t‖∞`, infinite for a diverged run.
    pub fn max_sync_error_from(&self, from: usize) -> f64 {
        if self.diverged_at.is_some() {
            return f64::INFINITY;
        }
        self.sync_error.iter().skip(from).cloned().fold(0.0, f64::max)
    }
}

/// Run `controller` on `plant` for `steps` steps from `x0`.
pub fn simulate(
    plant: &Plant,
    controller: &RandomizedController,
    x0: &DVector<f64>,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let (l, m) = (plant.state_dim(), plant.input_dim());
    if x0.len() != l {
        return Err(Error::dims("initial state", l, x0.len()));
    }
    let mut states = vec![x0.clone()];
    let mut controls = Vec::with_capacity(steps);
    let mut noises = Vec::with_capacity(steps);
    let mut diverged_at = None;
    let mut x = x0.clone();
    for t in 0..steps {
        let u = controller.sample(&x, rng);
        let w = plant.sample_noise(rng);
        x = plant.step(&x, &u, &w)?;
        controls.push(u);
        noises.push(w);
        states.push(x.clone());
        if is_diverged(&x) {
            diverged_at = Some(t + 1);
            break;
        }
    }
    let sync_error = states.iter().map(|s| s.amax()).collect();
    Ok(Trajectory {
        states: stack_rows(&states, l),
        controls: stack_rows(&controls, m),
        noises: stack_rows(&noises, l),
        sync_error,
        diverged_at,
    })
}

fn stack_rows(rows: &[DVector<f64>], width: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j])
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub trajectory: Trajectory,
    pub solution: GainSolution,
    pub controllability: ControllabilityReport,
    /// Model used for the design.
    pub model: LinearModel,
    pub fitted: Option<FittedModel>,
    pub warnings: Vec<String>,
}

/// Build or identify the design model.
pub fn design_model(config: &ExperimentConfig) -> Result<(LinearModel, Option<FittedModel>)> {
    match config.model_source {
        ModelSource::Analytic => Ok((config.analytic_model()?, None)),
        ModelSource::Identified => {
            let plant = Plant::linearized(&config.lattice, &config.noise_cov)?;
            let seed = stream_seed(config.seed, IDENTIFICATION_STREAM);
            let data = excite_and_collect(&plant, config.excitation, config.sysid_samples, seed)?;
            let fit = fit_linear_model(&data)?;
            let model = fit.to_model(config.sigma_mode).map_err(|_| {
                Error::Identifiability("fitted residual covariance is not positive definite".into())
            })?;
            Ok((model, Some(fit)))
        }
    }
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rand::RngCore::next_u64(&mut rng)
}

fn simulation_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SIMULATION_STREAM);
    rng
}

/// Design on the (analytic or identified) model, verify, then simulate.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let (model, fitted) = design_model(config)?;
    let solution = design(&model, &config.gamma, config.riccati)?;
    let controllability = stochastic_ctrb_verdict(&model, config.ctrb_horizon, config.bound_tol);
    let mut warnings = Vec::new();
    if !solution.assumption_holds() {
        warnings.push(format!(
            "stability assumption violated: rank {} of {}, spectral radius {}",
            solution.as_rank,
            model.state_dim(),
            solution.spectral_radius
        ));
    }
    if !controllability.det_controllable {
        warnings.push(format!(
            "pair (A, B) not controllable: rank {} of {}",
            controllability.det_rank,
            model.state_dim()
        ));
    }
    let controller = if config.deterministic_control {
        RandomizedController::deterministic(solution.c.clone())
    } else {
        RandomizedController::new(solution.c.clone(), &config.gamma)?
    };
    let plant = config.plant()?;
    let mut rng = simulation_rng(config.seed);
    let trajectory = simulate(&plant, &controller, &config.x0, config.steps, &mut rng)?;
    if let Some(t) = trajectory.diverged_at {
        warnings.push(format!("plant diverged at step {t}"));
    }
    Ok(ExperimentOutcome { trajectory, solution, controllability, model, fitted, warnings })
}

/// Runs one experiment per seed concurrently; results are in seed order.
pub fn run_batch(config: &ExperimentConfig, seeds: &[u64]) -> Vec<Result<ExperimentOutcome>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut c = config.clone();
            c.seed = seed;
            run_experiment(&c)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateStats {
    pub rms_per_site: DVector<f64>,
    pub max_abs: f64,
    /// Mean of `|u|` over all inputs and steps.
    pub mean_control_magnitude: f64,
}

/// Statistics over states `t ∈ [burn_in, T]` and controls `t ∈ [burn_in, T)`.
pub fn steady_state_stats(traj: &Trajectory, burn_in: usize) -> Result<SteadyStateStats> {
    let t = traj.steps();
    if burn_in >= t {
        return Err(Error::InvalidParams(format!("burn-in {burn_in} must be below horizon {t}")));
    }
    let states = traj.states.rows(burn_in, traj.states.nrows() - burn_in);
    let controls = traj.controls.rows(burn_in, t - burn_in);
    let rms_per_site = DVector::from_fn(states.ncols(), |j, _| {
        (states.column(j).norm_squared() / states.nrows() as f64).sqrt()
    });
    let mean_control_magnitude = if controls.is_empty() {
        0.0
    } else {
        controls.iter().map(|v| v.abs()).sum::<f64>() / controls.len() as f64
    };
    Ok(SteadyStateStats { rms_per_site, max_abs: states.amax(), mean_control_magnitude })
}

/// Solves `P = A P Aᵀ + Q` for stable `A` by squared Smith iteration.
pub fn discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || q.shape() != a.shape() {
        return Err(Error::dims("lyapunov", format!("{:?}", a.shape()), format!("{:?}", q.shape())));
    }
    let mut p = q.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let inc = &ak * &p * ak.transpose();
        let done = inc.norm() <= f64::EPSILON * p.norm();
        p += inc;
        if done {
            return Ok(symmetrize(&p));
        }
        ak = &ak * &ak;
        if !p.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::InvalidParams("lyapunov iteration diverged; A is not stable".into()))
}

/// Stationary covariance of `x' = (A+BC)x + Bω + κ` on the linearized plant.
pub fn stationary_covariance(config: &ExperimentConfig, solution: &GainSolution) -> Result<DMatrix<f64>> {
    let plant = LinearModel::from_lattice(&config.lattice, DMatrix::identity(config.lattice.len(), config.lattice.len()))?;
    let acl = plant.a() + plant.b() * &solution.c;
    let mut q = config.noise_cov.clone();
    if !config.deterministic_control {
        q += plant.b() * &config.gamma * plant.b().transpose();
    }
    discrete_lyapunov(&acl, &symmetrize(&q))
}
