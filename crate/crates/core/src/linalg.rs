//! Small dense linear-algebra helpers shared by the analysis modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Numerical rank with cutoff `max_dim * sigma_max * 2^-40`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 || !smax.is_finite() {
        return 0;
    }
    let cutoff = m.nrows().max(m.ncols()) as f64 * smax * 2f64.powi(-40);
    sv.iter().filter(|&&s| s > cutoff).count()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * m.amax().max(1.0)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Cholesky factor of a symmetric positive definite matrix.
pub fn spd_cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if !is_symmetric(m, 1e-12) {
        return Err(Error::NotPositiveDefinite(what));
    }
    Cholesky::new(symmetrize(m)).ok_or(Error::NotPositiveDefinite(what))
}

/// Symmetric PSD square root `V diag(sqrt(max(λ,0))) Vᵀ`.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Symmetric root of the inverse of an SPD matrix.
pub fn inv_sym_sqrt(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite(what));
    }
    let d = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Zero-mean Gaussian sampler with covariance `S Sᵀ`, `S` the symmetric root.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    /// Accepts any symmetric PSD covariance.
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::dims("gaussian covariance", "square", format!("{}x{}", cov.nrows(), cov.ncols())));
        }
        if !is_symmetric(cov, 1e-12) || min_eigenvalue(cov) < -1e-12 * cov.amax().max(1.0) {
            return Err(Error::InvalidParams("covariance must be symmetric PSD".into()));
        }
        Ok(Self { factor: sym_sqrt(cov) })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * z
    }
}
