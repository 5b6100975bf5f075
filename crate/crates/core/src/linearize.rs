//! Linearization of the lattice about its homogeneous steady state.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lattice::{fixed_point, validate_pins, LatticeParams};
use crate::linalg::{is_symmetric, spd_cholesky};

/// Linear stochastic model `x' = A x + B u + E κ`, `κ ~ N(0, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    sigma: DMatrix<f64>,
    e: DMatrix<f64>,
}

impl LinearModel {
    /// Model with identity noise input matrix.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::with_noise_input(a, b, sigma, DMatrix::identity(n, n))
    }

    pub fn with_noise_input(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        sigma: DMatrix<f64>,
        e: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(Error::dims("model A", format!("{n}x{n}"), format!("{}x{}", n, a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::dims("model B", format!("{n}xM"), format!("{}x{}", b.nrows(), b.ncols())));
        }
        if sigma.shape() != (n, n) {
            return Err(Error::dims("model Sigma", format!("{n}x{n}"), format!("{:?}", sigma.shape())));
        }
        if e.shape() != (n, n) {
            return Err(Error::dims("model E", format!("{n}x{n}"), format!("{:?}", e.shape())));
        }
        if !is_symmetric(&sigma, 1e-12) {
            return Err(Error::NotPositiveDefinite("Sigma"));
        }
        spd_cholesky(&sigma, "Sigma")?;
        Ok(Self { a, b, sigma, e })
    }

    /// Linearized lattice with state-noise covariance `sigma`.
    pub fn from_lattice(params: &LatticeParams, sigma: DMatrix<f64>) -> Result<Self> {
        Self::new(
            jacobian(params)?,
            pin_matrix(params.len(), params.pin_sites())?,
            sigma,
        )
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn with_sigma(&self, sigma: DMatrix<f64>) -> Result<Self> {
        Self::with_noise_input(self.a.clone(), self.b.clone(), sigma, self.e.clone())
    }
}

/// Local slope of the logistic map at its fixed point, `2 - a`.
pub fn map_slope(a: f64) -> Result<f64> {
    fixed_point(a)?;
    Ok(2.0 - a)
}

/// Circulant Jacobian of the uncontrolled lattice at the homogeneous fixed point.
pub fn jacobian(params: &LatticeParams) -> Result<DMatrix<f64>> {
    let alpha = map_slope(params.a())?;
    let eps = params.epsilon();
    let n = params.len();
    let mut j = DMatrix::zeros(n, n);
    for i in 0..n {
        j[(i, i)] += alpha * (1.0 - 2.0 * eps);
        // for L = 2 both neighbours are the same site and accumulate
        j[(i, (i + n - 1) % n)] += alpha * eps;
        j[(i, (i + 1) % n)] += alpha * eps;
    }
    Ok(j)
}

/// `L x M` input matrix with a single 1 in row `i_m` of column `m`.
pub fn pin_matrix(len: usize, pin_sites: &[usize]) -> Result<DMatrix<f64>> {
    validate_pins(len, pin_sites)?;
    let mut b = DMatrix::zeros(len, pin_sites.len());
    for (m, &site) in pin_sites.iter().enumerate() {
        b[(site - 1, m)] = 1.0;
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{step, LatticeState};
    use nalgebra::DVector;
    use proptest::prelude::*;

    #[test]
    fn jacobian_non_chaotic_lattice() {
        let p = LatticeParams::new(3.0, 0.33, 5, vec![1, 5]).unwrap();
        let j = jacobian(&p).unwrap();
        #[rustfmt::skip]
        let printed = DMatrix::from_row_slice(5, 5, &[
            -0.34, -0.33, 0.0, 0.0, -0.33,
            -0.33, -0.34, -0.33, 0.0, 0.0,
            0.0, -0.33, -0.34, -0.33, 0.0,
            0.0, 0.0, -0.33, -0.34, -0.33,
            -0.33, 0.0, 0.0, -0.33, -0.34,
        ]);
        assert!((j - printed).amax() < 1e-14);
        assert_eq!(map_slope(3.0).unwrap(), -1.0);
    }

    #[test]
    fn jacobian_chaotic_lattice() {
        let p = LatticeParams::new(4.0, 0.25, 10, vec![1, 10]).unwrap();
        let j = jacobian(&p).unwrap();
        for i in 0..10 {
            assert_eq!(j[(i, i)], -1.0);
            assert_eq!(j[(i, (i + 1) % 10)], -0.5);
            assert_eq!(j[(i, (i + 9) % 10)], -0.5);
            assert_eq!(j.row(i).iter().filter(|v| **v != 0.0).count(), 3);
        }
    }

    #[test]
    fn jacobian_two_sites_accumulates_neighbours() {
        let p = LatticeParams::new(3.0, 0.2, 2, vec![1]).unwrap();
        let j = jacobian(&p).unwrap();
        assert!((j[(0, 0)] + 0.6).abs() < 1e-15);
        assert!((j[(0, 1)] + 0.4).abs() < 1e-15);
    }

    #[test]
    fn jacobian_rejects_small_a() {
        let p = LatticeParams::new(0.9, 0.2, 4, vec![1]).unwrap();
        assert!(jacobian(&p).is_err());
    }

    #[test]
    fn pin_matrix_examples() {
        let b = pin_matrix(5, &[1, 5]).unwrap();
        assert_eq!(b.column(0).as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(b.column(1).as_slice(), &[0.0, 0.0, 0.0, 0.0, 1.0]);
        let b = pin_matrix(3, &[2]).unwrap();
        assert_eq!(b.column(0).as_slice(), &[0.0, 1.0, 0.0]);
        let b = pin_matrix(10, &[1, 10]).unwrap();
        assert_eq!(b[(0, 0)], 1.0);
        assert_eq!(b[(9, 1)], 1.0);
        assert_eq!(b.sum(), 2.0);
        assert!(pin_matrix(5, &[1, 1]).is_err());
        assert!(pin_matrix(5, &[6]).is_err());
        assert!(pin_matrix(5, &[0]).is_err());
    }

    #[test]
    fn model_rejects_indefinite_sigma() {
        let p = LatticeParams::new(3.0, 0.33, 5, vec![1, 5]).unwrap();
        let mut s = DMatrix::identity(5, 5);
        s[(2, 2)] = 0.0;
        assert!(LinearModel::from_lattice(&p, s).is_err());
        assert!(LinearModel::from_lattice(&p, DMatrix::identity(4, 4)).is_err());
    }

    proptest! {
        #[test]
        fn jacobian_is_symmetric_circulant(a in 1.01f64..=4.0, eps in 0.01f64..0.49, n in 3usize..12) {
            let p = LatticeParams::new(a, eps, n, vec![1]).unwrap();
            let j = jacobian(&p).unwrap();
            let alpha = 2.0 - a;
            prop_assert!((&j - j.transpose()).amax() == 0.0);
            for i in 0..n {
                prop_assert!((j.row(i).sum() - alpha).abs() < 1e-12);
                for k in 0..n {
                    prop_assert_eq!(j[(i, k)], j[((i + 1) % n, (k + 1) % n)]);
                }
            }
        }

        #[test]
        fn pin_matrix_columns_orthonormal(n in 2usize..12, picks in prop::collection::btree_set(1usize..12, 1..4)) {
            let pins: Vec<usize> = picks.into_iter().filter(|&p| p <= n).collect();
            prop_assume!(!pins.is_empty());
            let b = pin_matrix(n, &pins).unwrap();
            let g = b.transpose() * &b;
            prop_assert_eq!(g, DMatrix::identity(pins.len(), pins.len()));
        }

        #[test]
        fn finite_difference_agrees_with_jacobian(
            a in 1.5f64..=4.0,
            eps in 0.05f64..0.45,
            dir in prop::collection::vec(-1.0f64..1.0, 6),
        ) {
            let p = LatticeParams::new(a, eps, 6, vec![2]).unwrap();
            let j = jacobian(&p).unwrap();
            let zs = fixed_point(a).unwrap();
            let d = DVector::from_vec(dir);
            prop_assume!(d.norm() > 0.1);
            let residual = |h: f64| {
                let s = LatticeState::new(DVector::from_element(6, zs) + &d * h);
                let out = step(&s, &p, &DVector::zeros(1), &DVector::zeros(6)).unwrap();
                let lin = &j * (&d * h);
                (out.z.add_scalar(-zs) - lin).norm() / h
            };
            let r1 = residual(1e-3);
            let r2 = residual(5e-4);
            // first-order residual ratio shrinks linearly with the step
            prop_assert!(r1 < 1e-2);
            prop_assert!((r2 / r1 - 0.5).abs() < 0.05, "ratio {}", r2 / r1);
        }
    }
}
