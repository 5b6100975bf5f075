//! Plants driven in deviation coordinates `x = z - z*`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::{fixed_point, step, LatticeParams, LatticeState};
use crate::linalg::GaussianSampler;
use crate::linearize::{jacobian, pin_matrix, LinearModel};

/// States with `‖x‖∞` above this (or non-finite) count as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone)]
pub enum Plant {
    Linear {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        e: DMatrix<f64>,
        noise: GaussianSampler,
    },
    Nonlinear {
        params: LatticeParams,
        fixed: f64,
        noise: GaussianSampler,
    },
}

impl Plant {
    /// Linear plant with the noise of the model itself.
    pub fn from_model(model: &LinearModel) -> Result<Self> {
        Ok(Plant::Linear {
            a: model.a().clone(),
            b: model.b().clone(),
            e: model.e().clone(),
            noise: GaussianSampler::new(model.sigma())?,
        })
    }

    /// Linearized lattice with additive noise of covariance `noise_cov`.
    pub fn linearized(params: &LatticeParams, noise_cov: &DMatrix<f64>) -> Result<Self> {
        let n = params.len();
        check_noise(n, noise_cov)?;
        Ok(Plant::Linear {
            a: jacobian(params)?,
            b: pin_matrix(n, params.pin_sites())?,
            e: DMatrix::identity(n, n),
            noise: GaussianSampler::new(noise_cov)?,
        })
    }

    pub fn nonlinear(params: &LatticeParams, noise_cov: &DMatrix<f64>) -> Result<Self> {
        check_noise(params.len(), noise_cov)?;
        Ok(Plant::Nonlinear {
            params: params.clone(),
            fixed: fixed_point(params.a())?,
            noise: GaussianSampler::new(noise_cov)?,
        })
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Plant::Linear { a, .. } => a.nrows(),
            Plant::Nonlinear { params, .. } => params.len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Plant::Linear { b, .. } => b.ncols(),
            Plant::Nonlinear { params, .. } => params.num_pins(),
        }
    }

    /// Disturbance entering the state equation for one step.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            Plant::Linear { e, noise, .. } => e * noise.sample(rng),
            Plant::Nonlinear { noise, .. } => noise.sample(rng),
        }
    }

    /// Next deviation state given control and disturbance.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Plant::Linear { a, b, .. } => {
                if x.len() != a.nrows() || u.len() != b.ncols() || w.len() != a.nrows() {
                    return Err(Error::dims("linear plant step", a.nrows(), x.len()));
                }
                Ok(a * x + b * u + w)
            }
            Plant::Nonlinear { params, fixed, .. } => {
                let z = LatticeState::new(x.add_scalar(*fixed));
                Ok(step(&z, params, u, w)?.z.add_scalar(-*fixed))
            }
        }
    }
}

fn check_noise(n: usize, cov: &DMatrix<f64>) -> Result<()> {
    if cov.shape() != (n, n) {
        return Err(Error::dims("plant noise covariance", format!("{n}x{n}"), format!("{:?}", cov.shape())));
    }
    Ok(())
}

pub fn is_diverged(x: &DVector<f64>) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
}
