//! Nonlinear coupled map lattice with periodic boundaries and pinned
//! control injection.
//!
//! Sites are numbered `1..=L` in every public signature.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Configuration of a logistic coupled map lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeParams {
    a: f64,
    epsilon: f64,
    len: usize,
    pin_sites: Vec<usize>,
}

impl LatticeParams {
    pub fn new(a: f64, epsilon: f64, len: usize, pin_sites: Vec<usize>) -> Result<Self> {
        if !(a > 0.0 && a <= 4.0) {
            return Err(Error::InvalidParams(format!("map parameter a={a} outside (0, 4]")));
        }
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::InvalidParams(format!("coupling epsilon={epsilon} outside (0, 0.5)")));
        }
        if len < 2 {
            return Err(Error::InvalidParams(format!("lattice length {len} < 2")));
        }
        validate_pins(len, &pin_sites)?;
        Ok(Self { a, epsilon, len, pin_sites })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Number of sites `L`.
    pub fn len(&self) -> usize {
        self.len
    }

    /// 1-based pin site indices, in control order.
    pub fn pin_sites(&self) -> &[usize] {
        &self.pin_sites
    }

    /// Number of controls `M`.
    pub fn num_pins(&self) -> usize {
        self.pin_sites.len()
    }

    /// Same lattice with every pin shifted by `k` sites around the ring.
    pub fn rotated(&self, k: usize) -> Self {
        let pins = self
            .pin_sites
            .iter()
            .map(|&i| (i - 1 + k) % self.len + 1)
            .collect();
        Self { pin_sites: pins, ..self.clone() }
    }
}

pub(crate) fn validate_pins(len: usize, pins: &[usize]) -> Result<()> {
    if pins.is_empty() || pins.len() > len {
        return Err(Error::InvalidParams(format!(
            "need 1..={len} pin sites, got {}",
            pins.len()
        )));
    }
    let mut seen = vec![false; len];
    for &p in pins {
        if p == 0 || p > len {
            return Err(Error::InvalidParams(format!("pin site {p} outside 1..={len}")));
        }
        if seen[p - 1] {
            return Err(Error::InvalidParams(format!("duplicate pin site {p}")));
        }
        seen[p - 1] = true;
    }
    Ok(())
}

/// Site values `z^1..z^L` of the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    pub z: DVector<f64>,
}

impl LatticeState {
    pub fn new(z: DVector<f64>) -> Self {
        Self { z }
    }

    pub fn uniform(len: usize, value: f64) -> Self {
        Self { z: DVector::from_element(len, value) }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

pub fn logistic_map(z: f64, a: f64) -> f64 {
    a * z * (1.0 - z)
}

/// Homogeneous steady state `1 - 1/a`.
pub fn fixed_point(a: f64) -> Result<f64> {
    if !(a > 1.0) {
        return Err(Error::InvalidParams(format!(
            "fixed point 1 - 1/a is nonpositive for a={a}"
        )));
    }
    Ok(1.0 - 1.0 / a)
}

/// Advance the lattice one step.
///
/// Each site applies the logistic map to its diffusively coupled value,
/// then receives the control of any pin placed on it and its additive
/// disturbance. No clipping is applied.
pub fn step(
    state: &LatticeState,
    params: &LatticeParams,
    controls: &DVector<f64>,
    noise: &DVector<f64>,
) -> Result<LatticeState> {
    let len = params.len();
    if state.len() != len {
        return Err(Error::dims("lattice step state", len, state.len()));
    }
    if controls.len() != params.num_pins() {
        return Err(Error::dims("lattice step controls", params.num_pins(), controls.len()));
    }
    if noise.len() != len {
        return Err(Error::dims("lattice step noise", len, noise.len()));
    }
    let eps = params.epsilon();
    let z = &state.z;
    let mut next = DVector::from_fn(len, |i, _| {
        let left = z[(i + len - 1) % len];
        let right = z[(i + 1) % len];
        let coupled = (1.0 - 2.0 * eps) * z[i] + eps * (left + right);
        logistic_map(coupled, params.a()) + noise[i]
    });
    for (m, &site) in params.pin_sites().iter().enumerate() {
        next[site - 1] += controls[m];
    }
    Ok(LatticeState { z: next })
}
