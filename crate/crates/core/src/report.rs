//! Figure-ready CSV output and the plain-text run report.
//!
//! Numbers use Rust's shortest round-trip decimal form, so files are
//! lossless and byte-stable for a given run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::controllability::ControllabilityReport;
use crate::error::{Error, Result};
use crate::fpd::{GainSolution, COST_TO_GO_OFFSET};
use crate::sim::{ExperimentConfig, ExperimentOutcome, ModelSource, PlantKind};

pub const STATES_CSV: &str = "states.csv";
pub const CONTROLS_CSV: &str = "controls.csv";
pub const GAIN_CSV: &str = "gain.csv";
pub const MCOST_CSV: &str = "mcost.csv";
pub const EIGS_CSV: &str = "eigs.csv";
pub const REPORT_TXT: &str = "report.txt";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn labels(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

/// Rows `t, v1..vN` of a time-indexed matrix.
pub fn write_time_series(path: &Path, prefix: &str, data: &DMatrix<f64>) -> Result<()> {
    let header: Vec<String> = std::iter::once("t".to_string()).chain(labels(prefix, data.ncols())).collect();
    write_table(
        path,
        &header,
        data.row_iter().enumerate().map(|(t, row)| {
            std::iter::once(t.to_string()).chain(row.iter().map(|v| v.to_string())).collect()
        }),
    )
}

/// Row-major matrix with a leading row label.
pub fn write_matrix(path: &Path, row_label: &str, col_prefix: &str, m: &DMatrix<f64>) -> Result<()> {
    let header: Vec<String> = std::iter::once(row_label.to_string()).chain(labels(col_prefix, m.ncols())).collect();
    write_table(
        path,
        &header,
        m.row_iter().enumerate().map(|(i, row)| {
            std::iter::once((i + 1).to_string()).chain(row.iter().map(|v| v.to_string())).collect()
        }),
    )
}

/// Gain, cost matrix and closed-loop eigenvalues.
pub fn write_solution(out_dir: &Path, sol: &GainSolution) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let gain = out_dir.join(GAIN_CSV);
    let mcost = out_dir.join(MCOST_CSV);
    let eigs = out_dir.join(EIGS_CSV);
    write_matrix(&gain, "input", "site", &sol.c)?;
    write_matrix(&mcost, "row", "col", &sol.mcost)?;
    write_table(
        &eigs,
        &["re".to_string(), "im".to_string()],
        sol.eigenvalues.iter().map(|z| vec![z.re.to_string(), z.im.to_string()]),
    )?;
    Ok(vec![gain, mcost, eigs])
}

fn plant_name(k: PlantKind) -> &'static str {
    match k {
        PlantKind::Nonlinear => "nonlinear",
        PlantKind::Linearized => "linearized",
    }
}

fn source_name(s: ModelSource) -> &'static str {
    match s {
        ModelSource::Analytic => "analytic",
        ModelSource::Identified => "identified",
    }
}

pub fn controllability_lines(out: &mut String, r: &ControllabilityReport) {
    let _ = writeln!(out, "det_rank = {}", r.det_rank);
    let _ = writeln!(out, "det_controllable = {}", r.det_controllable);
    let _ = writeln!(out, "sc_rank = {}", r.sc_rank);
    let _ = writeln!(out, "psi_pd = {}", r.psi_pd);
    let _ = writeln!(out, "psi_bounded = {}", r.psi_bounded);
    let _ = writeln!(out, "psi_norm_last = {}", r.psi_norm_sequence.last().copied().unwrap_or(0.0));
    let _ = writeln!(out, "stochastically_controllable = {}", r.stochastically_controllable);
}

pub fn solution_lines(out: &mut String, s: &GainSolution) {
    let _ = writeln!(out, "as_rank = {}", s.as_rank);
    let _ = writeln!(out, "spectral_radius = {}", s.spectral_radius);
    let _ = writeln!(out, "stabilizing = {}", s.is_stabilizing());
    let _ = writeln!(out, "assumption_holds = {}", s.assumption_holds());
    let _ = writeln!(out, "riccati_residual = {}", s.riccati_residual);
    let _ = writeln!(out, "riccati_iterations = {}", s.iterations);
    let _ = writeln!(out, "lyapunov_residual = {}", s.lyapunov_residual);
    let _ = writeln!(out, "cost_to_go_offset = {COST_TO_GO_OFFSET} (unspecified constant, reported as zero)");
}

/// `key = value` summary of a run.
pub fn render_report(config: &ExperimentConfig, outcome: &ExperimentOutcome) -> String {
    let mut out = String::new();
    let lat = &config.lattice;
    let pins: Vec<String> = lat.pin_sites().iter().map(|p| p.to_string()).collect();
    let _ = writeln!(out, "length = {}", lat.len());
    let _ = writeln!(out, "a = {}", lat.a());
    let _ = writeln!(out, "epsilon = {}", lat.epsilon());
    let _ = writeln!(out, "pins = {}", pins.join(", "));
    let _ = writeln!(out, "plant = {}", plant_name(config.plant_kind));
    let _ = writeln!(out, "model = {}", source_name(config.model_source));
    let _ = writeln!(out, "seed = {}", config.seed);
    let _ = writeln!(out, "steps = {}", config.steps);
    let _ = writeln!(out, "deterministic_control = {}", config.deterministic_control);
    controllability_lines(&mut out, &outcome.controllability);
    solution_lines(&mut out, &outcome.solution);
    let traj = &outcome.trajectory;
    let _ = writeln!(out, "initial_sync_error = {}", traj.sync_error.first().copied().unwrap_or(0.0));
    let _ = writeln!(out, "final_sync_error = {}", traj.sync_error.last().copied().unwrap_or(0.0));
    let _ = writeln!(out, "max_sync_error_after_100 = {}", traj.max_sync_error_from(100));
    match traj.diverged_at {
        Some(t) => {
            let _ = writeln!(out, "diverged_at = {t}");
        }
        None => {
            let _ = writeln!(out, "diverged_at = none");
        }
    }
    for w in &outcome.warnings {
        let _ = writeln!(out, "warning = {w}");
    }
    out
}

/// Write every output file of a run into `out_dir`.
pub fn emit_report(config: &ExperimentConfig, outcome: &ExperimentOutcome, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let states = out_dir.join(STATES_CSV);
    let controls = out_dir.join(CONTROLS_CSV);
    write_time_series(&states, "x", &outcome.trajectory.states)?;
    write_time_series(&controls, "u", &outcome.trajectory.controls)?;
    let mut files = vec![states, controls];
    files.extend(write_solution(out_dir, &outcome.solution)?);
    let report = out_dir.join(REPORT_TXT);
    fs::write(&report, render_report(config, outcome)).map_err(io_err(&report))?;
    files.push(report);
    Ok(files)
}

/// Parse a `key = value` report back into pairs.
pub fn parse_report(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}
