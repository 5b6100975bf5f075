use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cmlsync::config::{load_config, preset};
use cmlsync::controllability::stochastic_ctrb_verdict;
use cmlsync::fpd::design;
use cmlsync::lattice::fixed_point;
use cmlsync::linearize::{jacobian, pin_matrix};
use cmlsync::plant::Plant;
use cmlsync::report::{controllability_lines, emit_report, solution_lines, write_matrix, write_solution};
use cmlsync::sim::{design_model, run_experiment, ExperimentConfig, ModelSource, PlantKind};
use cmlsync::sysid::{excite_and_collect, fit_linear_model, Dataset};
use cmlsync::{Error, Result};

#[derive(Parser)]
#[command(name = "cmlsync", version, about = "Probabilistic pinning control of stochastic coupled map lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlantArg {
    Nonlinear,
    Linearized,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Analytic,
    Identified,
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure {
    Fig1,
    Fig3,
}

#[derive(Args)]
struct Overrides {
    /// Experiment config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    plant: Option<PlantArg>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the linearized model (A, B) about the homogeneous fixed point
    Linearize {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Deterministic and stochastic controllability of the design model
    Ctrb {
        #[command(flatten)]
        opts: Overrides,
    },
    /// Collect excitation data and fit (A, B, Sigma)
    Identify {
        #[command(flatten)]
        opts: Overrides,
        /// Fit an existing dataset instead of collecting one
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Solve for the gain and write gain.csv, mcost.csv, eigs.csv
    Design {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a closed-loop experiment and write all outputs
    Simulate {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a built-in experiment
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        plant: Option<PlantArg>,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn resolve(opts: &Overrides) -> Result<ExperimentConfig> {
    let path = opts
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let mut c = load_config(path)?;
    apply(&mut c, opts.seed, opts.plant, opts.model);
    c.validate()?;
    Ok(c)
}

fn apply(c: &mut ExperimentConfig, seed: Option<u64>, plant: Option<PlantArg>, model: Option<ModelArg>) {
    if let Some(s) = seed {
        c.seed = s;
    }
    if let Some(p) = plant {
        c.plant_kind = match p {
            PlantArg::Nonlinear => PlantKind::Nonlinear,
            PlantArg::Linearized => PlantKind::Linearized,
        };
    }
    if let Some(m) = model {
        c.model_source = match m {
            ModelArg::Analytic => ModelSource::Analytic,
            ModelArg::Identified => ModelSource::Identified,
        };
    }
}

fn print_matrix(name: &str, m: &nalgebra::DMatrix<f64>) {
    println!("{name}");
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        println!("{}", cells.join(","));
    }
}

fn run_and_emit(config: &ExperimentConfig, out: &Path) -> Result<ExitCode> {
    let outcome = run_experiment(config)?;
    for f in emit_report(config, &outcome, out)? {
        println!("wrote {}", f.display());
    }
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    match outcome.trajectory.diverged_at {
        Some(step) => Err(Error::Divergence { step }),
        None => Ok(ExitCode::SUCCESS),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Linearize { opts, out } => {
            let c = resolve(&opts)?;
            let a = jacobian(&c.lattice)?;
            let b = pin_matrix(c.lattice.len(), c.lattice.pin_sites())?;
            println!("fixed_point = {}", fixed_point(c.lattice.a())?);
            print_matrix("A", &a);
            print_matrix("B", &b);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
                write_matrix(&dir.join("A.csv"), "row", "col", &a)?;
                write_matrix(&dir.join("B.csv"), "row", "col", &b)?;
            }
        }
        Command::Ctrb { opts } => {
            let c = resolve(&opts)?;
            let (model, _) = design_model(&c)?;
            let r = stochastic_ctrb_verdict(&model, c.ctrb_horizon, c.bound_tol);
            let mut s = String::new();
            controllability_lines(&mut s, &r);
            print!("{s}");
            print_matrix("Psi", &r.psi);
        }
        Command::Identify { opts, data, out } => {
            let c = resolve(&opts)?;
            let dataset = match data {
                Some(path) => Dataset::read_csv(&path)?,
                None => {
                    // excitation data comes from the linearized lattice unless
                    // the nonlinear plant is requested explicitly
                    let plant = match opts.plant {
                        Some(PlantArg::Nonlinear) => Plant::nonlinear(&c.lattice, &c.noise_cov)?,
                        _ => Plant::linearized(&c.lattice, &c.noise_cov)?,
                    };
                    excite_and_collect(&plant, c.excitation, c.sysid_samples, c.seed)?
                }
            };
            let fit = fit_linear_model(&dataset)?;
            std::fs::create_dir_all(&out).map_err(|source| Error::Io { path: out.clone(), source })?;
            dataset.write_csv(&out.join("dataset.csv"))?;
            write_matrix(&out.join("A_hat.csv"), "row", "col", &fit.a)?;
            write_matrix(&out.join("B_hat.csv"), "row", "col", &fit.b)?;
            write_matrix(&out.join("sigma_hat.csv"), "row", "col", &fit.sigma_full)?;
            let diag: Vec<String> = fit.sigma_full.diagonal().iter().map(|v| v.to_string()).collect();
            println!("samples = {}", fit.samples);
            println!("sigma_diagonal = {}", diag.join(", "));
            print_matrix("A_hat", &fit.a);
            print_matrix("B_hat", &fit.b);
        }
        Command::Design { opts, out } => {
            let c = resolve(&opts)?;
            let (model, _) = design_model(&c)?;
            let sol = design(&model, &c.gamma, c.riccati)?;
            let mut s = String::new();
            solution_lines(&mut s, &sol);
            print!("{s}");
            for f in write_solution(&out, &sol)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Simulate { opts, out } => {
            let c = resolve(&opts)?;
            return run_and_emit(&c, &out);
        }
        Command::Reproduce { figure, seed, plant, model, out } => {
            let mut c = preset(match figure {
                Figure::Fig1 => "fig1",
                Figure::Fig3 => "fig3",
            })?;
            apply(&mut c, seed, plant, model);
            c.validate()?;
            return run_and_emit(&c, &out);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
