//! Least-squares estimation of `(A, B, Σ)` from recorded transitions.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, symmetrize};
use crate::linearize::LinearModel;
use crate::plant::{is_diverged, Plant};

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub x_next: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    state_dim: usize,
    input_dim: usize,
    records: Vec<Record>,
}

impl Dataset {
    pub fn new(state_dim: usize, input_dim: usize, records: Vec<Record>) -> Result<Self> {
        for (t, r) in records.iter().enumerate() {
            if r.x.len() != state_dim || r.x_next.len() != state_dim || r.u.len() != input_dim {
                return Err(Error::dims(
                    "dataset record",
                    format!("x {state_dim}, u {input_dim}"),
                    format!("record {t}: x {}, u {}, x_next {}", r.x.len(), r.u.len(), r.x_next.len()),
                ));
            }
        }
        Ok(Self { state_dim, input_dim, records })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((1..=self.state_dim).map(|i| format!("x{i}")));
        h.extend((1..=self.input_dim).map(|i| format!("u{i}")));
        h.extend((1..=self.state_dim).map(|i| format!("xnext{i}")));
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(self.header()).map_err(csv_err)?;
        for (t, r) in self.records.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(r.x.iter().chain(r.u.iter()).chain(r.x_next.iter()).map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(csv_err)?;
        let header = rdr.headers().map_err(csv_err)?.clone();
        let count = |prefix: &str| {
            header
                .iter()
                .filter(|h| h.strip_prefix(prefix).is_some_and(|rest| rest.parse::<usize>().is_ok()))
                .count()
        };
        let (l, m) = (count("x"), count("u"));
        if header.len() != 1 + 2 * l + m || count("xnext") != l || header.get(0) != Some("t") {
            return Err(Error::Config(format!(
                "{}: header must be t, x1..xL, u1..uM, xnext1..xnextL",
                path.display()
            )));
        }
        let mut records = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let vals: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Config(format!("{} row {}: {e}", path.display(), row + 1)))
                })
                .collect::<Result<_>>()?;
            records.push(Record {
                x: DVector::from_row_slice(&vals[..l]),
                u: DVector::from_row_slice(&vals[l..l + m]),
                x_next: DVector::from_row_slice(&vals[l + m..]),
            });
        }
        Dataset::new(l, m, records)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaMode {
    /// Keep only the diagonal of the residual covariance.
    #[default]
    Diagonal,
    Full,
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Residual covariance `(1/N) Σ r rᵀ`.
    pub sigma_full: DMatrix<f64>,
    pub samples: usize,
}

impl FittedModel {
    pub fn sigma_diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.sigma_full.diagonal())
    }

    pub fn sigma(&self, mode: SigmaMode) -> DMatrix<f64> {
        match mode {
            SigmaMode::Diagonal => self.sigma_diag(),
            SigmaMode::Full => self.sigma_full.clone(),
        }
    }

    /// Fails when the chosen covariance is not positive definite, e.g. for
    /// noise-free data.
    pub fn to_model(&self, mode: SigmaMode) -> Result<LinearModel> {
        LinearModel::new(self.a.clone(), self.b.clone(), self.sigma(mode))
    }
}

/// Stacked regressors `[xᵀ uᵀ]` (N x (L+M)) and targets (N x L).
fn regression_matrices(data: &Dataset) -> (DMatrix<f64>, DMatrix<f64>) {
    let (l, m, n) = (data.state_dim, data.input_dim, data.len());
    let mut phi = DMatrix::zeros(n, l + m);
    let mut y = DMatrix::zeros(n, l);
    for (t, r) in data.records.iter().enumerate() {
        phi.view_mut((t, 0), (1, l)).copy_from(&r.x.transpose());
        phi.view_mut((t, l), (1, m)).copy_from(&r.u.transpose());
        y.row_mut(t).copy_from(&r.x_next.transpose());
    }
    (phi, y)
}

/// Multivariate least squares `x_next ≈ A x + B u` without intercept.
pub fn fit_linear_model(data: &Dataset) -> Result<FittedModel> {
    let (l, m, n) = (data.state_dim, data.input_dim, data.len());
    let p = l + m;
    if n < p {
        return Err(Error::Identifiability(format!("{n} records for {p} regressors")));
    }
    let (phi, y) = regression_matrices(data);
    let rank = numerical_rank(&phi);
    if rank < p {
        return Err(Error::Identifiability(format!(
            "regressor matrix has rank {rank} < {p}; inputs are not persistently exciting"
        )));
    }
    let svd = phi.clone().svd(true, true);
    let theta_t = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Identifiability(e.to_string()))?;
    let theta = theta_t.transpose();
    let resid = &y - &phi * &theta_t;
    let sigma_full = symmetrize(&(resid.transpose() * &resid / n as f64));
    Ok(FittedModel {
        a: theta.columns(0, l).into_owned(),
        b: theta.columns(l, m).into_owned(),
        sigma_full,
        samples: n,
    })
}

/// Residuals `x_next - A x - B u` for each record, as rows.
pub fn residuals(data: &Dataset, fit: &FittedModel) -> DMatrix<f64> {
    let (phi, y) = regression_matrices(data);
    let mut theta = DMatrix::zeros(data.state_dim, data.state_dim + data.input_dim);
    theta.columns_mut(0, data.state_dim).copy_from(&fit.a);
    theta.columns_mut(data.state_dim, data.input_dim).copy_from(&fit.b);
    y - phi * theta.transpose()
}

/// White-noise excitation `u_t ~ N(0, std² I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhiteNoiseExcitation {
    pub input_std: f64,
}

impl Default for WhiteNoiseExcitation {
    fn default() -> Self {
        Self { input_std: 0.1 }
    }
}

/// Roll `plant` forward from `x = 0` for `n` steps under white-noise inputs.
///
/// One ChaCha8 stream seeded with `seed`; each step draws the inputs
/// before the plant disturbance.
pub fn excite_and_collect(
    plant: &Plant,
    policy: WhiteNoiseExcitation,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParams("sample count must be positive".into()));
    }
    if !(policy.input_std > 0.0) {
        return Err(Error::InvalidParams("excitation std must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, policy.input_std).expect("positive std");
    let (l, m) = (plant.state_dim(), plant.input_dim());
    let mut x = DVector::zeros(l);
    let mut records = Vec::with_capacity(n);
    for t in 0..n {
        let u = DVector::from_fn(m, |_, _| normal.sample(&mut rng));
        let w = plant.sample_noise(&mut rng);
        let next = plant.step(&x, &u, &w)?;
        if is_diverged(&next) {
            return Err(Error::Divergence { step: t + 1 });
        }
        records.push(Record { x: x.clone(), u, x_next: next.clone() });
        x = next;
    }
    Dataset::new(l, m, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeParams;

    fn scalar(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn scalar_system_by_hand() {
        // x' = 0.5 x + u, three samples
        let recs = [(1.0, 0.0), (0.5, 1.0), (2.0, -1.0)]
            .iter()
            .map(|&(x, u)| Record { x: scalar(x), u: scalar(u), x_next: scalar(0.5 * x + u) })
            .collect();
        let fit = fit_linear_model(&Dataset::new(1, 1, recs).unwrap()).unwrap();
        // normal equations [[5.25, -1.5], [-1.5, 2]] θ = [1.125, 2.25] give θ = (0.5, 1)
        assert!((fit.a[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((fit.b[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(fit.sigma_full[(0, 0)].abs() < 1e-28);
    }

    #[test]
    fn rank_deficient_inputs_are_rejected() {
        let recs: Vec<_> = (0..10)
            .map(|t| Record { x: scalar(t as f64), u: scalar(2.0 * t as f64), x_next: scalar(1.0) })
            .collect();
        let err = fit_linear_model(&Dataset::new(1, 1, recs).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Identifiability(_)));
        let one = vec![Record { x: scalar(1.0), u: scalar(1.0), x_next: scalar(1.0) }];
        assert!(matches!(
            fit_linear_model(&Dataset::new(1, 1, one).unwrap()),
            Err(Error::Identifiability(_))
        ));
    }

    #[test]
    fn dataset_rejects_ragged_records() {
        let r = Record { x: scalar(1.0), u: DVector::zeros(2), x_next: scalar(1.0) };
        assert!(Dataset::new(1, 1, vec![r]).is_err());
    }

    #[test]
    fn zero_samples_rejected_and_collection_deterministic() {
        let p = LatticeParams::new(3.0, 0.33, 5, vec![1, 5]).unwrap();
        let plant = Plant::linearized(&p, &(DMatrix::identity(5, 5) * 0.001)).unwrap();
        assert!(excite_and_collect(&plant, WhiteNoiseExcitation::default(), 0, 1).is_err());
        let d1 = excite_and_collect(&plant, WhiteNoiseExcitation::default(), 200, 9).unwrap();
        let d2 = excite_and_collect(&plant, WhiteNoiseExcitation::default(), 200, 9).unwrap();
        assert_eq!(d1, d2);
        let d3 = excite_and_collect(&plant, WhiteNoiseExcitation::default(), 200, 10).unwrap();
        assert_ne!(d1, d3);
    }

    #[test]
    fn divergence_reports_step() {
        let m = LinearModel::new(
            DMatrix::identity(2, 2) * 10.0,
            DMatrix::identity(2, 1),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let plant = Plant::from_model(&m).unwrap();
        match excite_and_collect(&plant, WhiteNoiseExcitation::default(), 100, 3) {
            Err(Error::Divergence { step }) => assert!(step > 3 && step < 20, "step {step}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn residuals_orthogonal_to_regressors_and_sigma_psd() {
        let p = LatticeParams::new(3.0, 0.33, 5, vec![1, 5]).unwrap();
        let plant = Plant::linearized(&p, &(DMatrix::identity(5, 5) * 0.001)).unwrap();
        let data = excite_and_collect(&plant, WhiteNoiseExcitation::default(), 2000, 4).unwrap();
        let fit = fit_linear_model(&data).unwrap();
        let r = residuals(&data, &fit);
        let (phi, _) = regression_matrices(&data);
        let ortho = phi.transpose() * &r;
        assert!(ortho.amax() < 1e-9 * phi.norm() * r.norm(), "{}", ortho.amax());
        assert!(crate::linalg::min_eigenvalue(&fit.sigma_full) >= 0.0);
        assert!((&fit.sigma_full - fit.sigma_full.transpose()).amax() == 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let p = LatticeParams::new(3.0, 0.33, 3, vec![2]).unwrap();
        let plant = Plant::linearized(&p, &(DMatrix::identity(3, 3) * 0.001)).unwrap();
        let data = excite_and_collect(&plant, WhiteNoiseExcitation::default(), 25, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        data.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,x1,x2,x3,u1,xnext1,xnext2,xnext3\n"));
        assert_eq!(Dataset::read_csv(&path).unwrap(), data);
    }

    fn fig1_plant(noise: f64) -> (LinearModel, Plant) {
        let p = LatticeParams::new(3.0, 0.33, 5, vec![1, 5]).unwrap();
        let m = LinearModel::from_lattice(&p, DMatrix::identity(5, 5)).unwrap();
        let plant = Plant::linearized(&p, &(DMatrix::identity(5, 5) * noise)).unwrap();
        (m, plant)
    }

    #[test]
    fn noise_free_data_recovers_exact_model() {
        let (m, plant) = fig1_plant(0.0);
        let data = excite_and_collect(&plant, WhiteNoiseExcitation::default(), 50, 2).unwrap();
        let fit = fit_linear_model(&data).unwrap();
        assert!((&fit.a - m.a()).norm() < 1e-8);
        assert!((&fit.b - m.b()).norm() < 1e-8);
    }

    #[test]
    fn noisy_fit_brackets_true_noise_level() {
        let (m, plant) = fig1_plant(0.001);
        let data = excite_and_collect(&plant, WhiteNoiseExcitation::default(), 10_000, 5).unwrap();
        let fit = fit_linear_model(&data).unwrap();
        for i in 0..5 {
            let s = fit.sigma_full[(i, i)];
            assert!((0.0005..=0.002).contains(&s), "sigma[{i}] = {s}");
        }
        assert!((&fit.b - m.b()).norm() < 0.1);
    }

    #[test]
    fn noisy_fit_recovers_transition_matrix() {
        let (m, plant) = fig1_plant(0.001);
        let data = excite_and_collect(&plant, WhiteNoiseExcitation::default(), 10_000, 5).unwrap();
        let err = (fit_linear_model(&data).unwrap().a - m.a()).norm();
        assert!(err < 0.02, "Frobenius error {err}");
    }

    #[test]
    fn estimation_error_shrinks_with_samples() {
        let (m, plant) = fig1_plant(0.001);
        let mean_err = |n: usize| {
            (0..5u64)
                .map(|s| {
                    let d = excite_and_collect(&plant, WhiteNoiseExcitation::default(), n, 100 + s).unwrap();
                    (fit_linear_model(&d).unwrap().a - m.a()).norm()
                })
                .sum::<f64>()
                / 5.0
        };
        let e = [mean_err(100), mean_err(1000), mean_err(10_000)];
        assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
    }
}
