//! Deterministic and stochastic controllability analysis.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, numerical_rank, spectral_norm, symmetrize};
use crate::linearize::LinearModel;

/// Krylov stack `[B | AB | ... | A^{L-1}B]`.
pub fn ctrb_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n {
        return Err(Error::dims(
            "controllability matrix",
            format!("A {n}x{n}, B {n}xM"),
            format!("A {:?}, B {:?}", a.shape(), b.shape()),
        ));
    }
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        out.columns_mut(k * m, m).copy_from(&block);
        block = a * block;
    }
    Ok(out)
}

pub fn ctrb_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<usize> {
    Ok(numerical_rank(&ctrb_matrix(a, b)?))
}

/// State transition `φ(to, from) = A_{to-1} ... A_{from}` over a sequence
/// indexed by time.
pub fn transition(a_seq: &[DMatrix<f64>], from: usize, to: usize) -> Result<DMatrix<f64>> {
    if to < from {
        return Err(Error::InvalidParams(format!("transition from {from} to earlier time {to}")));
    }
    if to > a_seq.len() {
        return Err(Error::InvalidParams(format!(
            "transition needs A_0..A_{} but only {} matrices given",
            to - 1,
            a_seq.len()
        )));
    }
    let n = match a_seq.first() {
        Some(a) => a.nrows(),
        None => return Err(Error::InvalidParams("empty transition sequence".into())),
    };
    let mut phi = DMatrix::identity(n, n);
    for a in &a_seq[from..to] {
        if a.shape() != (n, n) {
            return Err(Error::dims("transition", format!("{n}x{n}"), format!("{:?}", a.shape())));
        }
        phi = a * phi;
    }
    Ok(phi)
}

/// Covariance of the noise-driven residual `d_h = x_h - φ(h, 0) x_0` under
/// zero control, starting at time 0:
/// `Σ_{j=1}^{h} φ(h, j) E_{j-1} Σ_{j-1} E_{j-1}ᵀ φ(h, j)ᵀ`.
pub fn residual_covariance(
    a_seq: &[DMatrix<f64>],
    e_seq: &[DMatrix<f64>],
    sigma_seq: &[DMatrix<f64>],
    horizon: usize,
) -> Result<DMatrix<f64>> {
    if horizon == 0 {
        return Err(Error::InvalidParams("residual horizon must be positive".into()));
    }
    if a_seq.len() < horizon || e_seq.len() < horizon || sigma_seq.len() < horizon {
        return Err(Error::dims(
            "residual covariance sequences",
            format!("length >= {horizon}"),
            format!("A {}, E {}, Sigma {}", a_seq.len(), e_seq.len(), sigma_seq.len()),
        ));
    }
    let n = a_seq[0].nrows();
    let mut cov = DMatrix::zeros(n, n);
    for j in 1..=horizon {
        let e = &e_seq[j - 1];
        let s = &sigma_seq[j - 1];
        if e.nrows() != n || s.shape() != (e.ncols(), e.ncols()) {
            return Err(Error::dims(
                "residual covariance noise",
                format!("E {n}xK, Sigma KxK"),
                format!("E {:?}, Sigma {:?}", e.shape(), s.shape()),
            ));
        }
        let g = transition(a_seq, j, horizon)? * e;
        cov += &g * s * g.transpose();
    }
    Ok(symmetrize(&cov))
}

/// Stationary residual covariances `Ψ_1..Ψ_h` via `Ψ_k = A Ψ_{k-1} Aᵀ + E Σ Eᵀ`.
pub fn stationary_psi_sequence(model: &LinearModel, horizon: usize) -> Vec<DMatrix<f64>> {
    let a = model.a();
    let q = symmetrize(&(model.e() * model.sigma() * model.e().transpose()));
    let n = model.state_dim();
    let mut psi = DMatrix::zeros(n, n);
    (0..horizon)
        .map(|_| {
            psi = symmetrize(&(a * &psi * a.transpose() + &q));
            psi.clone()
        })
        .collect()
}

/// `[E | φE | ... | φ^{L-1}E]` with `φ` the one-step transition of a
/// stationary model.
pub fn stochastic_ctrb_matrix(model: &LinearModel) -> DMatrix<f64> {
    ctrb_matrix(model.a(), model.e()).expect("model dimensions are validated")
}

#[derive(Debug, Clone)]
pub struct ControllabilityReport {
    pub det_rank: usize,
    pub det_controllable: bool,
    /// Residual covariance at horizon `L`.
    pub psi: DMatrix<f64>,
    /// Spectral norms `‖Ψ_k‖` for `k = 1..=max_horizon`.
    pub psi_norm_sequence: Vec<f64>,
    pub psi_pd: bool,
    pub psi_bounded: bool,
    pub sc_rank: usize,
    pub stochastically_controllable: bool,
}

/// Controllability verdicts for a stationary model.
///
/// `‖Ψ_k‖` counts as bounded when the relative increment of the last
/// step, `(‖Ψ_K‖ - ‖Ψ_{K-1}‖) / ‖Ψ_K‖` at `K = max_horizon`, is below
/// `bound_tol`.
pub fn stochastic_ctrb_verdict(
    model: &LinearModel,
    max_horizon: usize,
    bound_tol: f64,
) -> ControllabilityReport {
    let n = model.state_dim();
    let det_rank = numerical_rank(&ctrb_matrix(model.a(), model.b()).expect("validated"));
    let horizon = max_horizon.max(n).max(2);
    let seq = stationary_psi_sequence(model, horizon);
    let psi = seq[n - 1].clone();
    let norms: Vec<f64> = seq.iter().take(max_horizon.max(1)).map(spectral_norm).collect();
    let psi_pd = psi.amax() > 0.0 && min_eigenvalue(&psi) > 1e-12 * psi.amax();
    let psi_bounded = tail_is_bounded(&norms, bound_tol);
    let sc_rank = numerical_rank(&stochastic_ctrb_matrix(model));
    ControllabilityReport {
        det_rank,
        det_controllable: det_rank == n,
        psi,
        psi_norm_sequence: norms,
        psi_pd,
        psi_bounded,
        sc_rank,
        stochastically_controllable: sc_rank == n && psi_bounded,
    }
}

fn tail_is_bounded(norms: &[f64], bound_tol: f64) -> bool {
    if norms.iter().any(|v| !v.is_finite()) {
        return false;
    }
    match norms {
        [] => false,
        [only] => *only == 0.0,
        [.., prev, last] => {
            if *last == 0.0 {
                return true;
            }
            (last - prev) <= bound_tol * last
        }
    }
}
