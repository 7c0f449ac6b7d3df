//! Command-line driver: `simulate`, `estimate`, and `check-constraint`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
//! inconsistent inputs), 3 numerical failure (a Poisson solve missing its
//! tolerance under `--strict`).

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::{Array2, Array3};

use crate::chisq::{chisq_weights, weighted_mean, FunctionalWeights, MeanTarget, QWeights};
use crate::error::{Error, Result};
use crate::grid::{Grids, Kernel, KernelMatrix};
use crate::io::{read_config, read_curves, read_design, write_curves, CurveTable};
use crate::mem::{gaussian, poisson};
use crate::sampling::{ht_functional_mean, FunctionalSample};
use crate::simulation::{monte_carlo, EstimatorKind, MonteCarloOutput, SimConfig};

#[derive(Parser)]
#[command(
    name = "funcal",
    version,
    about = "Functional calibration estimators for survey mean curves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo study on synthetic curve populations
    Simulate(SimulateArgs),
    /// Estimate the population mean curve from sample files
    Estimate(EstimateArgs),
    /// Report how well a weight table meets its calibration constraint
    CheckConstraint(CheckConstraintArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON configuration file; built-in defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replication count, overriding the configuration
    #[arg(long)]
    reps: Option<usize>,
    /// Master seed, overriding the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Estimators to run, comma separated: ht, chisq, mem-gauss, mem-poisson
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<EstimatorKind>>,
    /// Output directory, created when missing
    #[arg(long)]
    out: PathBuf,
    /// Exit with code 3 when any Poisson solve misses its tolerance
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct EstimateArgs {
    /// Response sample CSV, one row per sampled unit
    #[arg(long = "sample-y")]
    sample_y: PathBuf,
    /// Auxiliary sample CSV, one file per coordinate; repeat for several
    #[arg(long = "sample-x")]
    sample_x: Vec<PathBuf>,
    /// Population auxiliary mean CSV, one row per coordinate
    #[arg(long = "mu-x")]
    mu_x: Option<PathBuf>,
    /// Sampling design JSON: {"N": ..} plus "n" or "pi"
    #[arg(long)]
    design: PathBuf,
    /// Estimator: ht, chisq, mem-gauss, or mem-poisson
    #[arg(long)]
    method: EstimatorKind,
    /// JSON configuration for kernel, prior, and solver settings
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created when missing
    #[arg(long)]
    out: PathBuf,
    /// Exit with code 3 when the Poisson solve misses its tolerance
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct CheckConstraintArgs {
    /// Weight table CSV, one row per sampled unit
    #[arg(long)]
    weights: PathBuf,
    /// Auxiliary sample CSV, one file per coordinate; repeat for several
    #[arg(long = "sample-x", required = true)]
    sample_x: Vec<PathBuf>,
    /// Population auxiliary mean CSV, one row per coordinate
    #[arg(long = "mu-x")]
    mu_x: PathBuf,
    /// Population size; inferred from the mean weight total when omitted
    #[arg(long = "population-size")]
    population_size: Option<usize>,
}

/// Parses arguments, runs the selected command, and returns the process
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive here too; those are not errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Simulate(args) => run_simulate(&args),
        Command::Estimate(args) => run_estimate(&args),
        Command::CheckConstraint(args) => run_check(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Same grid on two files, allowing last-digit formatting differences.
fn require_same_grid(reference: &[f64], other: &CurveTable, path: &Path) -> Result<()> {
    let grids_match = reference.len() == other.t().len()
        && reference
            .iter()
            .zip(other.t())
            .all(|(&a, &b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0));
    if grids_match {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{} has a different time grid than the first input file",
            path.display()
        )))
    }
}

fn require_same_ids(reference: &[String], other: &CurveTable, path: &Path) -> Result<()> {
    if reference == other.ids() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{} lists different unit identifiers than the response file",
            path.display()
        )))
    }
}

/// The kernel smoothing model places observations at t_l = l/L; calibrated
/// smoothing methods refuse grids that do not follow it.
fn require_canonical_grid(t: &[f64], method: EstimatorKind) -> Result<()> {
    let l = t.len() as f64;
    for (k, &v) in t.iter().enumerate() {
        let canonical = (k + 1) as f64 / l;
        if (v - canonical).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "{} needs the equispaced grid t_l = l/L on (0, 1], but point {} is {v}",
                method.label(),
                k + 1
            )));
        }
    }
    Ok(())
}

fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Weighted auxiliary means `N^{-1} sum_i w_i(t_l) x_i(t_l)`, `L x q`.
fn weighted_aux_means(
    weights: &Array2<f64>,
    x: &Array3<f64>,
    population_size: usize,
) -> Array2<f64> {
    let (n, l, q) = x.dim();
    let n_inv = 1.0 / population_size as f64;
    Array2::from_shape_fn((l, q), |(lidx, k)| {
        (0..n)
            .map(|i| weights[[i, lidx]] * x[[i, lidx, k]])
            .sum::<f64>()
            * n_inv
    })
}

fn run_simulate(args: &SimulateArgs) -> Result<i32> {
    let mut config = match &args.config {
        Some(path) => read_config(path)?,
        None => SimConfig::default(),
    };
    if let Some(reps) = args.reps {
        config.reps = reps;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(kinds) = &args.estimators {
        let mut unique = Vec::new();
        for &k in kinds {
            if !unique.contains(&k) {
                unique.push(k);
            }
        }
        config.estimators = unique;
    }
    config.validate()?;
    create_dir(&args.out)?;

    let start = Instant::now();
    let output = monte_carlo(&config)?;
    write_study_files(&args.out, &config, &output)?;

    println!(
        "{} replications, N = {}, n = {}, L = {}, J = {}, {:.1} s",
        config.reps,
        config.population_size,
        config.sample_size(),
        config.num_t,
        config.num_s,
        start.elapsed().as_secs_f64()
    );
    for row in &output.rows {
        println!(
            "{:<12} mse {:.6e}  bias2 {:.6e}  variance {:.6e}",
            row.estimator.label(),
            row.mse,
            row.bias2,
            row.variance
        );
    }
    println!("study files written to {}", args.out.display());

    let failures = output.poisson_failures();
    if failures > 0 {
        eprintln!(
            "warning: {failures} of {} Poisson solves missed tolerance {:.1e}",
            config.reps, config.residual_tolerance
        );
        if args.strict {
            eprintln!("error: --strict treats unmet Poisson tolerances as failure");
            return Ok(3);
        }
    }
    Ok(0)
}

fn write_study_files(dir: &Path, config: &SimConfig, output: &MonteCarloOutput) -> Result<()> {
    let grids = Grids::new(config.num_s, config.num_t)?;
    let t = grids.t().to_vec();

    let mut writer = csv::Writer::from_writer(Vec::new());
    let io_ctx = |e: csv::Error| Error::InvalidArgument(format!("csv buffer: {e}"));
    writer
        .write_record(["estimator", "mse", "bias2", "variance"])
        .map_err(io_ctx)?;
    for row in &output.rows {
        writer
            .write_record([
                row.estimator.label().to_string(),
                format_value(row.mse),
                format_value(row.bias2),
                format_value(row.variance),
            ])
            .map_err(io_ctx)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv buffer: {e}")))?;
    let decomposition = dir.join("decomposition.csv");
    std::fs::write(&decomposition, bytes).map_err(|e| Error::Io {
        path: decomposition.display().to_string(),
        source: e,
    })?;

    // reference mean first, then the Monte Carlo mean of every estimator
    let mut ids = vec!["mu-y".to_string()];
    let mut rows = vec![output.mu_y.values().to_vec()];
    for (kind, curve) in &output.mean_estimates {
        ids.push(kind.label().to_string());
        rows.push(curve.values().to_vec());
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let values = Array2::from_shape_vec((ids.len(), t.len()), flat)
        .expect("every row has L entries");
    write_curves(
        &CurveTable::new(t.clone(), ids, values)?,
        dir.join("mean_estimates.csv"),
    )?;

    for (kind, table) in &output.replication_estimates {
        let ids = (1..=table.nrows()).map(|r| r.to_string()).collect();
        write_curves(
            &CurveTable::new(t.clone(), ids, table.clone())?,
            dir.join(format!("replications_{}.csv", kind.label())),
        )?;
    }

    // first-replication calibration check: targets, then weighted means
    let q = output.mu_x.ncols();
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for k in 0..q {
        ids.push(format!("mu-x:x{}", k + 1));
        rows.push(output.mu_x.column(k).to_vec());
    }
    for (kind, aux) in &output.first_aux_estimates {
        for k in 0..q {
            ids.push(format!("{}:x{}", kind.label(), k + 1));
            rows.push(aux.column(k).to_vec());
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let values = Array2::from_shape_vec((ids.len(), t.len()), flat)
        .expect("every row has L entries");
    write_curves(
        &CurveTable::new(t.clone(), ids, values)?,
        dir.join("calibration_check.csv"),
    )?;

    let resolved = dir.join("resolved_config.json");
    let json = serde_json::to_string_pretty(config)
        .map_err(|e| Error::InvalidArgument(format!("config serialization: {e}")))?;
    std::fs::write(&resolved, json + "\n").map_err(|e| Error::Io {
        path: resolved.display().to_string(),
        source: e,
    })
}

fn run_estimate(args: &EstimateArgs) -> Result<i32> {
    let y_table = read_curves(&args.sample_y)?;
    if y_table.num_rows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} holds no sample rows",
            args.sample_y.display()
        )));
    }
    let t = y_table.t().to_vec();
    let l = t.len();
    let n = y_table.num_rows();

    let mut x_tables = Vec::with_capacity(args.sample_x.len());
    for path in &args.sample_x {
        let table = read_curves(path)?;
        require_same_grid(&t, &table, path)?;
        require_same_ids(y_table.ids(), &table, path)?;
        x_tables.push(table);
    }
    let q = x_tables.len();

    let design = read_design(&args.design)?.build(n)?;
    let ids = y_table.numeric_ids()?;
    let sample = if q == 0 {
        FunctionalSample::without_aux(ids, y_table.values().clone())?
    } else {
        let x = Array3::from_shape_fn((n, l, q), |(i, lidx, k)| {
            x_tables[k].values()[[i, lidx]]
        });
        FunctionalSample::new(ids, y_table.values().clone(), x)?
    };

    let mut config = match &args.config {
        Some(path) => read_config(path)?,
        None => SimConfig::default(),
    };
    config.num_t = l;
    config.validate()?;

    create_dir(&args.out)?;
    let mut poisson_missed = false;

    let (estimate, weights): (_, Option<FunctionalWeights>) = match args.method {
        EstimatorKind::Ht => (ht_functional_mean(&sample, &design)?, None),
        method => {
            if q == 0 {
                return Err(Error::InvalidArgument(format!(
                    "{} needs at least one --sample-x file",
                    method.label()
                )));
            }
            let mu_path = args.mu_x.as_ref().ok_or_else(|| {
                Error::InvalidArgument(format!("{} needs --mu-x", method.label()))
            })?;
            let mu_table = read_curves(mu_path)?;
            require_same_grid(&t, &mu_table, mu_path)?;
            if mu_table.num_rows() != q {
                return Err(Error::DimensionMismatch(format!(
                    "{} lists {} coordinate rows, {} --sample-x files were given",
                    mu_path.display(),
                    mu_table.num_rows(),
                    q
                )));
            }
            let mu_x = Array2::from_shape_fn((l, q), |(lidx, k)| {
                mu_table.values()[[k, lidx]]
            });
            let target = MeanTarget::new(mu_x, design.population_size())?;

            let w = match method {
                EstimatorKind::Chisq => {
                    let w = chisq_weights(&sample, &design, &target, &QWeights::ones(n, l))?;
                    let negatives = w.negative_count();
                    if negatives > 0 {
                        println!("chisq: {negatives} negative weights");
                    }
                    w
                }
                EstimatorKind::MemGauss => {
                    require_canonical_grid(&t, method)?;
                    let grids = Grids::new(config.num_s, l)?;
                    let km = KernelMatrix::new(&Kernel::gaussian(config.kernel_sigma2)?, &grids);
                    let (w, solution) =
                        gaussian::calibrate(&sample, &design, &target, &km, &grids, config.rcond)?;
                    println!(
                        "mem-gauss: effective rank {}, least-squares residual {:.3e}, max constraint violation {:.3e}",
                        solution.effective_rank,
                        solution.ls_residual_norm,
                        solution.constraint_max_abs
                    );
                    w
                }
                EstimatorKind::MemPoisson => {
                    require_canonical_grid(&t, method)?;
                    let grids = Grids::new(config.num_s, l)?;
                    let km = KernelMatrix::new(&Kernel::gaussian(config.kernel_sigma2)?, &grids);
                    let prior = poisson::PoissonPrior::uniform(
                        config.gamma,
                        config.jump_min,
                        config.jump_max,
                        config.quadrature_order,
                    )?;
                    let options = poisson::PoissonSolveOptions {
                        residual_tolerance: config.residual_tolerance,
                        max_iterations: config.max_iterations,
                        initial: None,
                    };
                    let (w, solution) =
                        poisson::calibrate(&prior, &sample, &design, &target, &km, &grids, &options)?;
                    println!(
                        "mem-poisson: {} iterations, residual {:.3e}, converged = {}",
                        solution.iterations, solution.residual_inf_norm, solution.converged
                    );
                    poisson_missed = !solution.converged;
                    w
                }
                EstimatorKind::Ht => unreachable!("handled above"),
            };
            let estimate = weighted_mean(&w, &sample, design.population_size())?;
            (estimate, Some(w))
        }
    };

    write_curves(
        &CurveTable::new(
            t.clone(),
            vec![args.method.label().to_string()],
            Array2::from_shape_vec((1, l), estimate.values().to_vec())
                .expect("estimate has L values"),
        )?,
        args.out.join("estimate.csv"),
    )?;

    if let Some(w) = &weights {
        write_curves(
            &CurveTable::new(t.clone(), y_table.ids().to_vec(), w.values().clone())?,
            args.out.join("weights.csv"),
        )?;

        // calibration check: target rows, then achieved weighted means
        let aux = weighted_aux_means(w.values(), sample.x(), design.population_size());
        let mu_table = read_curves(args.mu_x.as_ref().expect("checked above"))?;
        let mut ids = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for k in 0..q {
            ids.push(format!("mu-x:{}", mu_table.ids()[k]));
            rows.push(mu_table.values().row(k).to_vec());
        }
        let mut max_violation = 0.0f64;
        for k in 0..q {
            ids.push(format!("weighted:{}", mu_table.ids()[k]));
            let achieved = aux.column(k).to_vec();
            for (lidx, &v) in achieved.iter().enumerate() {
                max_violation = max_violation.max((v - mu_table.values()[[k, lidx]]).abs());
            }
            rows.push(achieved);
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((ids.len(), l), flat)
            .expect("every row has L entries");
        write_curves(
            &CurveTable::new(t.clone(), ids, values)?,
            args.out.join("calibration_check.csv"),
        )?;
        println!("max |weighted aux mean - target| = {max_violation:.3e}");
    }

    println!("estimate files written to {}", args.out.display());
    if poisson_missed && args.strict {
        eprintln!("error: --strict treats unmet Poisson tolerances as failure");
        return Ok(3);
    }
    Ok(0)
}

fn run_check(args: &CheckConstraintArgs) -> Result<i32> {
    let w_table = read_curves(&args.weights)?;
    if w_table.num_rows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} holds no weight rows",
            args.weights.display()
        )));
    }
    let t = w_table.t().to_vec();
    let l = t.len();
    let n = w_table.num_rows();

    let mut x_tables = Vec::with_capacity(args.sample_x.len());
    for path in &args.sample_x {
        let table = read_curves(path)?;
        require_same_grid(&t, &table, path)?;
        require_same_ids(w_table.ids(), &table, path)?;
        x_tables.push(table);
    }
    let q = x_tables.len();

    let mu_table = read_curves(&args.mu_x)?;
    require_same_grid(&t, &mu_table, &args.mu_x)?;
    if mu_table.num_rows() != q {
        return Err(Error::DimensionMismatch(format!(
            "{} lists {} coordinate rows, {} --sample-x files were given",
            args.mu_x.display(),
            mu_table.num_rows(),
            q
        )));
    }

    let totals: Vec<f64> = (0..l)
        .map(|lidx| (0..n).map(|i| w_table.values()[[i, lidx]]).sum())
        .collect();
    let mean_total: f64 = totals.iter().sum::<f64>() / l as f64;
    let n_pop = match args.population_size {
        Some(v) => {
            if v == 0 {
                return Err(Error::InvalidArgument("population size must be positive".into()));
            }
            v as f64
        }
        None => {
            let inferred = mean_total.round();
            if !(inferred >= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "cannot infer a population size from mean weight total {mean_total:.3}"
                )));
            }
            println!(
                "population size not given; using N = {inferred} from the mean weight total {mean_total:.6}"
            );
            inferred
        }
    };

    let max_total_dev = totals
        .iter()
        .fold(0.0f64, |acc, &s| acc.max((s - n_pop).abs()));
    println!("weight totals: max |sum_i w_i(t) - N| = {max_total_dev:.3e}");

    for (k, x_table) in x_tables.iter().enumerate() {
        let mut max_abs = 0.0f64;
        let mut max_mean_scale = 0.0f64;
        for lidx in 0..l {
            let weighted: f64 = (0..n)
                .map(|i| w_table.values()[[i, lidx]] * x_table.values()[[i, lidx]])
                .sum();
            let residual = weighted - n_pop * mu_table.values()[[k, lidx]];
            max_abs = max_abs.max(residual.abs());
            max_mean_scale = max_mean_scale.max(residual.abs() / n_pop);
        }
        println!(
            "{}: max |N^-1 sum_i w_i x_i - mu| = {max_mean_scale:.3e} (total scale {max_abs:.3e})",
            mu_table.ids()[k]
        );
    }
    Ok(0)
}
