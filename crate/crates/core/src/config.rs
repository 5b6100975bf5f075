//! Experiment configuration files.
//!
//! Files are TOML: `key = value` lines grouped under `[lattice]`,
//! `[noise]`, `[design]`, `[simulation]` and `[analysis]`. Covariances
//! accept a scalar (times identity), a list (diagonal) or a list of rows.
//! See `configs/fig1.toml` for a complete example.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fpd::RiccatiOptions;
use crate::lattice::LatticeParams;
use crate::sim::{ExperimentConfig, ModelSource, PlantKind};
use crate::sysid::{SigmaMode, WhiteNoiseExcitation};

pub const FIG1: &str = include_str!("../configs/fig1.toml");
pub const FIG3: &str = include_str!("../configs/fig3.toml");

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CovSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl CovSpec {
    pub fn to_matrix(&self, n: usize, what: &str) -> Result<DMatrix<f64>> {
        match self {
            CovSpec::Scalar(s) => Ok(DMatrix::identity(n, n) * *s),
            CovSpec::Diagonal(d) if d.len() == n => Ok(DMatrix::from_diagonal(&DVector::from_row_slice(d))),
            CovSpec::Full(rows) if rows.len() == n && rows.iter().all(|r| r.len() == n) => {
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
            _ => Err(Error::Config(format!("{what} must be a scalar, {n} diagonal entries or {n}x{n} rows"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum VecSpec {
    Scalar(f64),
    List(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatticeSection {
    a: f64,
    epsilon: f64,
    length: usize,
    pins: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    covariance: CovSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DesignSection {
    sigma: Option<CovSpec>,
    gamma: CovSpec,
    model: String,
    sysid_samples: usize,
    excitation_std: f64,
    sigma_mode: String,
    riccati_tol: f64,
    riccati_max_iter: usize,
}

impl Default for DesignSection {
    fn default() -> Self {
        let r = RiccatiOptions::default();
        Self {
            sigma: None,
            gamma: CovSpec::Scalar(0.01),
            model: "analytic".into(),
            sysid_samples: 10_000,
            excitation_std: WhiteNoiseExcitation::default().input_std,
            sigma_mode: "diagonal".into(),
            riccati_tol: r.tol,
            riccati_max_iter: r.max_iter,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SimulationSection {
    plant: String,
    x0: VecSpec,
    steps: usize,
    seed: u64,
    deterministic_control: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            plant: "nonlinear".into(),
            x0: VecSpec::Scalar(0.9),
            steps: 200,
            seed: 0,
            deterministic_control: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AnalysisSection {
    ctrb_horizon: usize,
    bound_tol: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { ctrb_horizon: 200, bound_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    lattice: LatticeSection,
    noise: NoiseSection,
    #[serde(default)]
    design: DesignSection,
    #[serde(default)]
    simulation: SimulationSection,
    #[serde(default)]
    analysis: AnalysisSection,
}

pub fn parse_plant_kind(s: &str) -> Result<PlantKind> {
    match s {
        "nonlinear" => Ok(PlantKind::Nonlinear),
        "linearized" | "linear" => Ok(PlantKind::Linearized),
        _ => Err(Error::Config(format!("unknown plant kind `{s}`"))),
    }
}

pub fn parse_model_source(s: &str) -> Result<ModelSource> {
    match s {
        "analytic" => Ok(ModelSource::Analytic),
        "identified" => Ok(ModelSource::Identified),
        _ => Err(Error::Config(format!("unknown model source `{s}`"))),
    }
}

fn parse_sigma_mode(s: &str) -> Result<SigmaMode> {
    match s {
        "diagonal" => Ok(SigmaMode::Diagonal),
        "full" => Ok(SigmaMode::Full),
        _ => Err(Error::Config(format!("unknown sigma mode `{s}`"))),
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let lat = &file.lattice;
    let lattice = LatticeParams::new(lat.a, lat.epsilon, lat.length, lat.pins.clone())?;
    let (l, m) = (lattice.len(), lattice.num_pins());
    let x0 = match &file.simulation.x0 {
        VecSpec::Scalar(v) => DVector::from_element(l, *v),
        VecSpec::List(v) if v.len() == l => DVector::from_row_slice(v),
        VecSpec::List(v) => return Err(Error::Config(format!("x0 has {} entries, lattice has {l}", v.len()))),
    };
    let design = &file.design;
    let config = ExperimentConfig {
        plant_kind: parse_plant_kind(&file.simulation.plant)?,
        noise_cov: file.noise.covariance.to_matrix(l, "noise covariance")?,
        design_sigma: design.sigma.as_ref().map(|s| s.to_matrix(l, "design sigma")).transpose()?,
        gamma: design.gamma.to_matrix(m, "gamma")?,
        x0,
        steps: file.simulation.steps,
        seed: file.simulation.seed,
        model_source: parse_model_source(&design.model)?,
        sysid_samples: design.sysid_samples,
        excitation: WhiteNoiseExcitation { input_std: design.excitation_std },
        sigma_mode: parse_sigma_mode(&design.sigma_mode)?,
        deterministic_control: file.simulation.deterministic_control,
        riccati: RiccatiOptions { tol: design.riccati_tol, max_iter: design.riccati_max_iter },
        ctrb_horizon: file.analysis.ctrb_horizon,
        bound_tol: file.analysis.bound_tol,
        lattice,
    };
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Built-in experiment by name (`fig1` or `fig3`).
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "fig1" => parse_config(FIG1),
        "fig3" => parse_config(FIG3),
        _ => Err(Error::Config(format!("unknown preset `{name}` (expected fig1 or fig3)"))),
    }
}
