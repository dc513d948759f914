//! Command-line entry point.
//!
//! Every command reads an optional TOML config; `--seed`, `--out` and
//! `--threads` override the corresponding config values. Exit status is 0 on
//! success, 1 for bad input, configuration or I/O, and 2 when estimation
//! fails numerically.

pub mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::RegressionData;
use crate::error::{Error, Result};
use crate::estimator::fit_vbdvs;
use crate::pipeline::forecast::{
    evaluate_oos, restrict_to_origins, run_expanding_window, EvalSummary, ForecastRecord,
    ForecastTask, ModelKind, ModelSpec, OriginFailure,
};
use crate::pipeline::panel::{
    format_float, prepare_panel, read_matrix_csv, read_panel, read_schema, write_json,
    write_matrix_csv, write_rows,
};
use crate::simulate::{default_config, run_monte_carlo, simulate_dgp, MonteCarloSpec};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "vbdvs",
    version,
    about = "Variational Bayes TVP regression with dynamic variable selection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads for Monte Carlo and forecasting.
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw one data set from the benchmark DGP.
    Simulate(CommonArgs),
    /// Fit the model to y.csv / x.csv.
    Fit(CommonArgs),
    /// Repeated simulate-and-fit with MSD summary.
    Montecarlo(CommonArgs),
    /// Expanding-window direct forecasts against the AR benchmark.
    ForecastEval(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Simulate(c)
            | Command::Fit(c)
            | Command::Montecarlo(c)
            | Command::ForecastEval(c) => c,
        }
    }
}

/// Loads the config and applies flag overrides.
pub fn resolve_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `out`".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn column_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("{prefix}{j}")).collect()
}

fn write_vector(path: &Path, name: &str, v: &DVector<f64>) -> Result<()> {
    write_matrix_csv(
        path,
        &[name.to_string()],
        &DMatrix::from_column_slice(v.len(), 1, v.as_slice()),
    )
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let sim = RunConfig::section(&cfg.simulate, "simulate")?;
    let dgp = default_config(sim.n_obs, sim.n_predictors, cfg.seed())?;
    let draw = simulate_dgp(&dgp)?;
    let dir = out_dir(cfg)?;
    let p = sim.n_predictors;
    write_vector(&dir.join("y.csv"), "y", &draw.y)?;
    write_matrix_csv(&dir.join("x.csv"), &column_names("x", p), &draw.x)?;
    write_matrix_csv(
        &dir.join("beta_true.csv"),
        &column_names("beta", p),
        &draw.beta_true,
    )?;
    write_vector(&dir.join("sigma2_true.csv"), "sigma2", &draw.sigma2_true)
}

#[derive(Serialize)]
struct FitDiagnostics {
    iterations_run: usize,
    final_delta: f64,
    converged: bool,
    wall_ms: f64,
    delta_history: Vec<f64>,
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let fit_cfg = RunConfig::section(&cfg.fit, "fit")?;
    let prior = cfg.prior.resolve()?;
    let opts = cfg.options.resolve()?;
    let (_, y) = read_matrix_csv(&fit_cfg.y)?;
    if y.ncols() != 1 {
        return Err(Error::invalid(format!(
            "{} must have exactly one column",
            fit_cfg.y.display()
        )));
    }
    let (names, x) = read_matrix_csv(&fit_cfg.x)?;
    let data = RegressionData::new(y.column(0).into_owned(), x)?;
    let dir = out_dir(cfg)?;

    let started = Instant::now();
    let fit = fit_vbdvs(&data, &prior, &opts)?;
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;

    write_matrix_csv(
        &dir.join("coeff_mean.csv"),
        &names,
        &fit.coefficient_means(),
    )?;
    write_matrix_csv(&dir.join("pip.csv"), &names, &fit.dvs.pip)?;
    write_vector(&dir.join("sigma2.csv"), "sigma2", &fit.sigma2)?;
    write_json(
        &dir.join("diagnostics.json"),
        &FitDiagnostics {
            iterations_run: fit.iterations_run,
            final_delta: fit.final_delta,
            converged: fit.converged,
            wall_ms,
            delta_history: fit.delta_history.clone(),
        },
    )
}

#[derive(Serialize)]
struct MonteCarloJson {
    n_obs: usize,
    n_predictors: usize,
    replications: usize,
    n_failed: usize,
    mean_msd: f64,
    median_msd: f64,
    sum_msd: f64,
    mean_wall_ms: f64,
}

pub fn cmd_montecarlo(cfg: &RunConfig) -> Result<()> {
    let mc = RunConfig::section(&cfg.montecarlo, "montecarlo")?;
    let spec = MonteCarloSpec {
        n_obs: mc.n_obs,
        n_predictors: mc.n_predictors,
        replications: mc.replications,
        seed: cfg.seed(),
        prior: cfg.prior.resolve()?,
        options: cfg.options.resolve()?,
    };
    let dir = out_dir(cfg)?;
    let summary = run_monte_carlo(&spec)?;
    let header: Vec<String> = [
        "replication",
        "seed",
        "msd",
        "wall_ms",
        "converged",
        "iterations",
        "error",
    ]
    .map(String::from)
    .to_vec();
    let rows: Vec<Vec<String>> = summary
        .records
        .iter()
        .map(|r| {
            vec![
                r.replication.to_string(),
                r.seed.to_string(),
                r.msd.map(format_float).unwrap_or_default(),
                format_float(r.wall_ms),
                r.converged.to_string(),
                r.iterations.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_rows(&dir.join("replications.csv"), &header, &rows)?;
    write_json(
        &dir.join("summary.json"),
        &MonteCarloJson {
            n_obs: summary.n_obs,
            n_predictors: summary.n_predictors,
            replications: summary.replications,
            n_failed: summary.n_failed,
            mean_msd: summary.mean_msd,
            median_msd: summary.median_msd,
            sum_msd: summary.sum_msd,
            mean_wall_ms: summary.mean_wall_ms,
        },
    )
}

#[derive(Debug, Serialize)]
struct ModelEval {
    name: String,
    n_forecasts: usize,
    n_failed: usize,
    #[serde(flatten)]
    summary: Option<EvalSummary>,
    failures: Vec<OriginFailure>,
}

#[derive(Debug, Serialize)]
struct HorizonEval {
    h: usize,
    benchmark: String,
    models: Vec<ModelEval>,
}

/// Target, predictors, factor block and dates for forecasting.
struct ForecastInputs {
    dates: Vec<String>,
    y: Vec<f64>,
    x: DMatrix<f64>,
    factor_x: DMatrix<f64>,
}

fn forecast_inputs(cfg: &RunConfig, section: &config::ForecastSection) -> Result<ForecastInputs> {
    if let Some(syn) = &section.synthetic {
        let draw = simulate_dgp(&default_config(syn.n_obs, syn.n_predictors, cfg.seed())?)?;
        let (y, x) = draw.leading_indicator_panel();
        return Ok(ForecastInputs {
            dates: (0..y.len()).map(|t| t.to_string()).collect(),
            y: y.iter().copied().collect(),
            factor_x: x.clone(),
            x,
        });
    }
    let (panel_path, schema_path, target) = match (&section.panel, &section.schema, &section.target)
    {
        (Some(p), Some(s), Some(t)) => (p, s, t),
        _ => {
            return Err(Error::Config(
                "[forecast] needs either `synthetic` or all of `panel`, `schema` and `target`"
                    .into(),
            ))
        }
    };
    let panel = read_panel(panel_path)?;
    let schema = read_schema(schema_path)?;
    let prepared = prepare_panel(&panel, &schema, target, section.price_target, section.kappa)?;
    Ok(ForecastInputs {
        factor_x: prepared.factor_block(),
        dates: prepared.dates,
        y: prepared.y,
        x: prepared.x,
    })
}

pub fn cmd_forecast_eval(cfg: &RunConfig) -> Result<()> {
    let section = RunConfig::section(&cfg.forecast, "forecast")?;
    let prior = cfg.prior.resolve()?;
    let opts = cfg.options.resolve()?;
    if section.horizons.is_empty() {
        return Err(Error::Config("forecast.horizons is empty".into()));
    }
    let inputs = forecast_inputs(cfg, section)?;
    let dir = out_dir(cfg)?;

    let benchmark = ModelSpec::ar();
    let mut models = vec![benchmark.clone()];
    models.extend(
        section
            .models
            .iter()
            .filter(|m| m.kind != ModelKind::Ar || m.name != benchmark.name)
            .cloned(),
    );

    let mut rows = Vec::new();
    let mut blocks = Vec::new();
    for &h in &section.horizons {
        let task = ForecastTask {
            horizon: h,
            lags: section.lags,
            window: section.window,
            target_transform: section.price_target,
        };
        let mut outputs = Vec::new();
        for model in &models {
            let x = if model.uses_factors() {
                &inputs.factor_x
            } else {
                &inputs.x
            };
            let out = run_expanding_window(&inputs.y, x, &task, model, &prior, &opts)?;
            for r in &out.records {
                rows.push(forecast_row(&model.name, h, &inputs.dates, r));
            }
            outputs.push(out);
        }
        let bench = &outputs[0].records;
        let evals = models
            .iter()
            .zip(&outputs)
            .map(|(model, out)| {
                let origins: Vec<usize> = out.records.iter().map(|r| r.origin).collect();
                let bench_common = restrict_to_origins(bench, &origins);
                let model_common = restrict_to_origins(
                    &out.records,
                    &bench_common.iter().map(|r| r.origin).collect::<Vec<_>>(),
                );
                ModelEval {
                    name: model.name.clone(),
                    n_forecasts: model_common.len(),
                    n_failed: out.failures.len(),
                    summary: evaluate_oos(&model_common, &bench_common).ok(),
                    failures: out.failures.clone(),
                }
            })
            .collect();
        blocks.push(HorizonEval {
            h,
            benchmark: benchmark.name.clone(),
            models: evals,
        });
    }
    let header: Vec<String> = [
        "model",
        "date",
        "origin",
        "h",
        "point",
        "variance",
        "realized",
        "log_pred_lik",
    ]
    .map(String::from)
    .to_vec();
    write_rows(&dir.join("forecasts.csv"), &header, &rows)?;
    write_json(&dir.join("eval.json"), &blocks)
}

fn forecast_row(model: &str, h: usize, dates: &[String], r: &ForecastRecord) -> Vec<String> {
    vec![
        model.to_string(),
        dates[r.origin].clone(),
        r.origin.to_string(),
        h.to_string(),
        format_float(r.point),
        format_float(r.variance),
        format_float(r.realized),
        format_float(r.log_pred_lik),
    ]
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(cli.command.common())?;
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(_) => cmd_simulate(&cfg),
        Command::Fit(_) => cmd_fit(&cfg),
        Command::Montecarlo(_) => cmd_montecarlo(&cfg),
        Command::ForecastEval(_) => cmd_forecast_eval(&cfg),
    }
}

pub fn exit_code(err: &Error) -> u8 {
    if err.is_numerical() {
        2
    } else {
        1
    }
}

/// Parses the process arguments, runs, and maps the outcome to an exit code.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
