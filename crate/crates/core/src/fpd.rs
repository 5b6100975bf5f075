//! Fully probabilistic design of a randomized linear state-feedback law.
//!
//! The controller `u = C x + ω`, `ω ~ N(0, Γ)`, minimizes the KL divergence
//! between the closed-loop density and the ideal densities `N(0, Σ)` on the
//! next state and `N(0, Γ)` on the input. For Gaussian models the cost-to-go
//! is `0.5 xᵀ M x` plus a constant, with `M` the fixed point of
//!
//! ```text
//! M = AᵀΣ⁻¹A + AᵀMA - (AᵀMB + AᵀΣ⁻¹B)(BᵀMB + BᵀΣ⁻¹B + Γ⁻¹)⁻¹(BᵀMA + BᵀΣ⁻¹A)
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{inv_sym_sqrt, min_eigenvalue, numerical_rank, spd_cholesky, symmetrize, GaussianSampler};
use crate::linearize::LinearModel;

/// Additive constant of the cost-to-go. It has no closed form and does not
/// influence `C` or `M`, so it is reported as zero.
pub const COST_TO_GO_OFFSET: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 10_000 }
    }
}

/// Quantities of the design problem that do not depend on `M`.
struct Terms {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    /// AᵀΣ⁻¹A
    q: DMatrix<f64>,
    /// AᵀΣ⁻¹B
    n: DMatrix<f64>,
    /// BᵀΣ⁻¹B + Γ⁻¹
    r: DMatrix<f64>,
}

impl Terms {
    fn new(model: &LinearModel, gamma: &DMatrix<f64>) -> Result<Self> {
        let m = model.input_dim();
        if gamma.shape() != (m, m) {
            return Err(Error::dims("Gamma", format!("{m}x{m}"), format!("{:?}", gamma.shape())));
        }
        let sig = spd_cholesky(model.sigma(), "Sigma")?;
        let gam = spd_cholesky(gamma, "Gamma")?;
        let a = model.a().clone();
        let b = model.b().clone();
        let sa = sig.solve(&a);
        let sb = sig.solve(&b);
        let q = symmetrize(&(a.transpose() * &sa));
        let n = a.transpose() * &sb;
        let r = symmetrize(&(b.transpose() * &sb + gam.inverse()));
        Ok(Self { a, b, q, n, r })
    }

    fn inner(&self, mcost: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
        let r = symmetrize(&(self.b.transpose() * mcost * &self.b + &self.r));
        Cholesky::new(r).ok_or(Error::Singular("BᵀMB + BᵀΣ⁻¹B + Γ⁻¹"))
    }

    /// BᵀMA + BᵀΣ⁻¹A
    fn cross(&self, mcost: &DMatrix<f64>) -> DMatrix<f64> {
        self.b.transpose() * mcost * &self.a + self.n.transpose()
    }

    fn gain(&self, mcost: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let k = self.cross(mcost);
        Ok(-self.inner(mcost)?.solve(&k))
    }

    fn riccati_rhs(&self, mcost: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let k = self.cross(mcost);
        let rk = self.inner(mcost)?.solve(&k);
        Ok(symmetrize(&(&self.q + self.a.transpose() * mcost * &self.a - k.transpose() * rk)))
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub mcost: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Successive iterates `M_0 = 0, M_{k+1} = RHS(M_k)` of the Riccati map.
pub struct RiccatiIterates {
    terms: Terms,
    current: DMatrix<f64>,
}

impl RiccatiIterates {
    pub fn new(model: &LinearModel, gamma: &DMatrix<f64>) -> Result<Self> {
        let n = model.state_dim();
        Ok(Self { terms: Terms::new(model, gamma)?, current: DMatrix::zeros(n, n) })
    }

    pub fn current(&self) -> &DMatrix<f64> {
        &self.current
    }

    /// Advance one step, returning `‖M_{k+1} - M_k‖_F`.
    pub fn advance(&mut self) -> Result<f64> {
        let next = self.terms.riccati_rhs(&self.current)?;
        let step = (&next - &self.current).norm();
        self.current = next;
        Ok(step)
    }
}

/// Iterations allowed after the tolerance is met while the residual still
/// improves.
const POLISH_ITERATIONS: usize = 200;
const POLISH_PATIENCE: usize = 10;

/// Fixed-point iteration of the Riccati map from `M = 0`.
///
/// Converged once the residual `‖RHS(M) - M‖_F` is below
/// `tol · max(1, ‖M‖_F)`. Iteration then continues while the residual
/// keeps falling, and the iterate with the smallest residual is returned.
pub fn solve_riccati(
    model: &LinearModel,
    gamma: &DMatrix<f64>,
    opts: RiccatiOptions,
) -> Result<RiccatiSolution> {
    let mut iter = RiccatiIterates::new(model, gamma)?;
    let mut residual = f64::INFINITY;
    for it in 0..=opts.max_iter {
        let prev = iter.current().clone();
        residual = iter.advance()?;
        if !residual.is_finite() {
            break;
        }
        if residual < opts.tol * prev.norm().max(1.0) {
            let mut best = RiccatiSolution { mcost: prev, residual, iterations: it };
            let mut stale = 0;
            for extra in 1..=POLISH_ITERATIONS {
                let prev = iter.current().clone();
                let r = iter.advance()?;
                if r < best.residual {
                    best = RiccatiSolution { mcost: prev, residual: r, iterations: it + extra };
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= POLISH_PATIENCE {
                        break;
                    }
                }
            }
            return Ok(best);
        }
    }
    Err(Error::RiccatiNonConvergence { iterations: opts.max_iter, residual })
}

/// `‖RHS(M) - M‖_F` for an arbitrary candidate `M`.
pub fn riccati_residual(model: &LinearModel, gamma: &DMatrix<f64>, mcost: &DMatrix<f64>) -> Result<f64> {
    let terms = Terms::new(model, gamma)?;
    Ok((terms.riccati_rhs(mcost)? - mcost).norm())
}

/// `C = -(BᵀMB + BᵀΣ⁻¹B + Γ⁻¹)⁻¹(BᵀMA + BᵀΣ⁻¹A)`.
pub fn gain(model: &LinearModel, gamma: &DMatrix<f64>, mcost: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = model.state_dim();
    if mcost.shape() != (n, n) {
        return Err(Error::dims("cost matrix", format!("{n}x{n}"), format!("{:?}", mcost.shape())));
    }
    Terms::new(model, gamma)?.gain(mcost)
}

pub fn closed_loop(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != a.nrows() || c.shape() != (b.ncols(), a.ncols()) || !a.is_square() {
        return Err(Error::dims(
            "closed loop A + BC",
            format!("A nxn, B nxm, C mxn with n={}", a.nrows()),
            format!("A {:?}, B {:?}, C {:?}", a.shape(), b.shape(), c.shape()),
        ));
    }
    Ok(a + b * c)
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Sorted by real part, then imaginary part.
    pub eigenvalues: Vec<Complex64>,
    pub spectral_radius: f64,
}

pub fn spectrum(m: &DMatrix<f64>) -> Spectrum {
    let mat = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    // faer's real Schur handles matrices (e.g. all zeros) where nalgebra's
    // iteration fails to terminate
    let mut eigenvalues: Vec<Complex64> = match mat.eigenvalues() {
        Ok(ev) => ev.into_iter().map(|z| Complex64::new(z.re, z.im)).collect(),
        Err(_) => vec![Complex64::new(f64::NAN, f64::NAN); m.nrows()],
    };
    eigenvalues.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    let spectral_radius = if eigenvalues.iter().any(|z| z.re.is_nan() || z.im.is_nan()) {
        f64::INFINITY
    } else {
        eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max)
    };
    Spectrum { eigenvalues, spectral_radius }
}

/// Eigenvalues of `A + BC`.
pub fn closed_loop_spectrum(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<Spectrum> {
    Ok(spectrum(&closed_loop(a, b, c)?))
}

/// Rank of `[W; WA; ...; WA^{L-1}]` with `W` the symmetric root of `Σ⁻¹`.
pub fn as_rank(sigma: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<usize> {
    let n = a.nrows();
    if !a.is_square() || sigma.shape() != (n, n) {
        return Err(Error::dims("as_rank", format!("{n}x{n}"), format!("Sigma {:?}", sigma.shape())));
    }
    spd_cholesky(sigma, "Sigma")?;
    let w = inv_sym_sqrt(sigma, "Sigma")?;
    let mut stacked = DMatrix::zeros(n * n, n);
    let mut block = w;
    for k in 0..n {
        stacked.rows_mut(k * n, n).copy_from(&block);
        block = block * a;
    }
    Ok(numerical_rank(&stacked))
}

/// `xᵀ[CᵀΓ⁻¹C + (A+BC)ᵀΣ⁻¹(A+BC)]x`, the expected one-step KL cost.
pub fn partial_cost(
    x: &DVector<f64>,
    c: &DMatrix<f64>,
    model: &LinearModel,
    gamma: &DMatrix<f64>,
) -> Result<f64> {
    let acl = closed_loop(model.a(), model.b(), c)?;
    if x.len() != model.state_dim() {
        return Err(Error::dims("partial cost state", model.state_dim(), x.len()));
    }
    let sig = spd_cholesky(model.sigma(), "Sigma")?;
    let gam = spd_cholesky(gamma, "Gamma")?;
    let u = c * x;
    let y = acl * x;
    Ok(u.dot(&gam.solve(&u)) + y.dot(&sig.solve(&y)))
}

/// `CᵀΓ⁻¹C + (A+BC)ᵀΣ⁻¹(A+BC) + (A+BC)ᵀM(A+BC) - M`.
///
/// Zero at the designed gain; positive semidefinite for any other `C`
/// when `M` solves the Riccati equation.
pub fn lyapunov_form(
    c: &DMatrix<f64>,
    mcost: &DMatrix<f64>,
    model: &LinearModel,
    gamma: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let acl = closed_loop(model.a(), model.b(), c)?;
    let sig = spd_cholesky(model.sigma(), "Sigma")?;
    let gam = spd_cholesky(gamma, "Gamma")?;
    let out = c.transpose() * gam.solve(c) + acl.transpose() * sig.solve(&acl) + acl.transpose() * mcost * &acl
        - mcost;
    Ok(symmetrize(&out))
}

pub fn lyapunov_residual(
    c: &DMatrix<f64>,
    mcost: &DMatrix<f64>,
    model: &LinearModel,
    gamma: &DMatrix<f64>,
) -> Result<f64> {
    Ok(lyapunov_form(c, mcost, model, gamma)?.norm())
}

/// `0.5 xᵀ M x` (the constant offset is [`COST_TO_GO_OFFSET`]).
pub fn cost_to_go(x: &DVector<f64>, mcost: &DMatrix<f64>) -> f64 {
    0.5 * x.dot(&(mcost * x)) + COST_TO_GO_OFFSET
}

/// Randomized linear feedback `u = C x + ω`.
#[derive(Debug, Clone)]
pub struct RandomizedController {
    gain: DMatrix<f64>,
    noise: Option<GaussianSampler>,
}

impl RandomizedController {
    pub fn new(gain: DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<Self> {
        if gamma.shape() != (gain.nrows(), gain.nrows()) {
            return Err(Error::dims("controller Gamma", gain.nrows(), format!("{:?}", gamma.shape())));
        }
        spd_cholesky(gamma, "Gamma")?;
        Ok(Self { gain, noise: Some(GaussianSampler::new(gamma)?) })
    }

    /// `u = C x` without the randomizing term.
    pub fn deterministic(gain: DMatrix<f64>) -> Self {
        Self { gain, noise: None }
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let mean = &self.gain * x;
        match &self.noise {
            Some(s) => mean + s.sample(rng),
            None => mean,
        }
    }
}

/// One draw of `u ~ N(C x, Γ)`.
pub fn sample_control<R: Rng + ?Sized>(
    c: &DMatrix<f64>,
    x: &DVector<f64>,
    gamma: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if x.len() != c.ncols() {
        return Err(Error::dims("sample_control state", c.ncols(), x.len()));
    }
    Ok(RandomizedController::new(c.clone(), gamma)?.sample(x, rng))
}

/// Completed square `(C + R⁻¹K)ᵀ R (C + R⁻¹K)` with
/// `R = BᵀMB + BᵀΣ⁻¹B + Γ⁻¹` and `K = BᵀMA + BᵀΣ⁻¹A`.
pub fn completed_square(
    c: &DMatrix<f64>,
    mcost: &DMatrix<f64>,
    model: &LinearModel,
    gamma: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let terms = Terms::new(model, gamma)?;
    let inner = terms.inner(mcost)?;
    let shift = c + inner.solve(&terms.cross(mcost));
    let r = symmetrize(&(terms.b.transpose() * mcost * &terms.b + &terms.r));
    Ok(symmetrize(&(shift.transpose() * r * &shift)))
}

#[derive(Debug, Clone)]
pub struct OptimalityReport {
    pub optimal: bool,
    /// Frobenius norm of the quadratic form at the designed gain.
    pub value_at_optimum: f64,
    /// Smallest eigenvalue of the form over all perturbed gains.
    pub min_perturbed_eigenvalue: f64,
}

/// Relative to `max(1, ‖M‖_F)`: entries of the form cancel terms of that size.
pub const OPTIMALITY_TOL: f64 = 1e-12;

/// Perturbs the designed gain `trials` times by random `ΔC` with
/// `‖ΔC‖_F = scale` and checks that the expanded quadratic form
/// [`lyapunov_form`] never has an eigenvalue below
/// `-OPTIMALITY_TOL * max(1, ‖M‖_F)`.
pub fn optimality_check<R: Rng + ?Sized>(
    c_star: &DMatrix<f64>,
    mcost: &DMatrix<f64>,
    model: &LinearModel,
    gamma: &DMatrix<f64>,
    trials: usize,
    scale: f64,
    rng: &mut R,
) -> Result<OptimalityReport> {
    let at_opt = lyapunov_form(c_star, mcost, model, gamma)?;
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        let mut d = DMatrix::from_fn(c_star.nrows(), c_star.ncols(), |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let nrm = d.norm();
        if nrm > 0.0 {
            d *= scale / nrm;
        }
        let form = lyapunov_form(&(c_star + d), mcost, model, gamma)?;
        worst = worst.min(min_eigenvalue(&form));
    }
    let floor = -OPTIMALITY_TOL * mcost.norm().max(1.0);
    let optimal = worst >= floor && min_eigenvalue(&at_opt) >= floor;
    Ok(OptimalityReport {
        optimal,
        value_at_optimum: at_opt.norm(),
        min_perturbed_eigenvalue: worst,
    })
}

/// Complete design result.
#[derive(Debug, Clone)]
pub struct GainSolution {
    pub c: DMatrix<f64>,
    pub mcost: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub riccati_residual: f64,
    pub iterations: usize,
    pub eigenvalues: Vec<Complex64>,
    pub spectral_radius: f64,
    pub as_rank: usize,
    pub lyapunov_residual: f64,
}

impl GainSolution {
    pub fn is_stabilizing(&self) -> bool {
        self.spectral_radius < 1.0
    }

    /// Closed-loop stability together with the full-rank condition.
    pub fn assumption_holds(&self) -> bool {
        self.is_stabilizing() && self.as_rank == self.c.ncols()
    }
}

/// Solve for `M`, form `C`, and evaluate the stability diagnostics.
pub fn design(model: &LinearModel, gamma: &DMatrix<f64>, opts: RiccatiOptions) -> Result<GainSolution> {
    let sol = solve_riccati(model, gamma, opts)?;
    let c = gain(model, gamma, &sol.mcost)?;
    let spec = closed_loop_spectrum(model.a(), model.b(), &c)?;
    let as_rank = as_rank(model.sigma(), model.a())?;
    let lyapunov_residual = lyapunov_residual(&c, &sol.mcost, model, gamma)?;
    Ok(GainSolution {
        c,
        mcost: sol.mcost,
        gamma: gamma.clone(),
        riccati_residual: sol.residual,
        iterations: sol.iterations,
        eigenvalues: spec.eigenvalues,
        spectral_radius: spec.spectral_radius,
        as_rank,
        lyapunov_residual,
    })
}
