//! Synthetic sparse TVP regressions and the Monte Carlo harness.
//!
//! Coefficients follow mean-reverting AR(1) paths switched on and off by a
//! fixed activation schedule; the measurement log-variance is an AR(1) too.
//!
//! Seed mapping: a draw seeds `ChaCha20Rng::seed_from_u64(seed)` and consumes,
//! for each period in order, one volatility shock, `p` coefficient shocks,
//! `p` predictor values and one measurement shock, all standard normal.
//! Monte Carlo replication `r` (0-based) uses seed `base_seed + r`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::RegressionData;
use crate::error::{Error, Result};
use crate::estimator::{fit_vbdvs, FitOptions, FitResult, PriorConfig};

/// Long-run levels of the first four coefficients; the rest are zero.
pub const BENCHMARK_THETA: [f64; 4] = [-1.7, 2.9, 1.4, -2.3];

#[derive(Debug, Clone, PartialEq)]
pub struct DgpConfig {
    pub theta_bar: Vec<f64>,
    pub rho: f64,
    pub state_scale: f64,
    pub sv_mean: f64,
    pub sv_rho: f64,
    pub sv_scale: f64,
    /// T x p activation pattern.
    pub schedule: DMatrix<bool>,
    pub seed: u64,
}

impl DgpConfig {
    pub fn n_obs(&self) -> usize {
        self.schedule.nrows()
    }

    pub fn n_predictors(&self) -> usize {
        self.schedule.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_bar.len() != self.n_predictors() {
            return Err(Error::invalid(
                "theta_bar length does not match the schedule",
            ));
        }
        if self.rho.abs() > 1.0 || self.sv_rho.abs() > 1.0 {
            return Err(Error::invalid("AR coefficients must satisfy |rho| <= 1"));
        }
        if self.state_scale < 0.0 || self.sv_scale < 0.0 {
            return Err(Error::invalid("innovation scales must be nonnegative"));
        }
        Ok(())
    }
}

fn round_half_even(x: f64) -> usize {
    x.round_ties_even() as usize
}

/// Activation pattern: predictor 1 active before `round(T/3)`, predictor 2
/// always, predictor 3 before `round(T/2)`, predictor 4 from `round(T/2)` on,
/// everything else never. Periods are 1-based in that description and
/// `round` breaks ties to even.
pub fn default_schedule(n_obs: usize, p: usize) -> Result<DMatrix<bool>> {
    if n_obs < 3 || p < 4 {
        return Err(Error::invalid(format!(
            "schedule needs T >= 3 and p >= 4, got T={n_obs}, p={p}"
        )));
    }
    let third = round_half_even(n_obs as f64 / 3.0);
    let half = round_half_even(n_obs as f64 / 2.0);
    Ok(DMatrix::from_fn(n_obs, p, |t, j| {
        let period = t + 1;
        match j {
            0 => period < third,
            1 => true,
            2 => period < half,
            3 => period >= half,
            _ => false,
        }
    }))
}

pub fn default_config(n_obs: usize, p: usize, seed: u64) -> Result<DgpConfig> {
    if p < 4 {
        return Err(Error::invalid(format!(
            "the benchmark design needs p >= 4, got {p}"
        )));
    }
    let mut theta_bar = vec![0.0; p];
    theta_bar[..4].copy_from_slice(&BENCHMARK_THETA);
    let scale = 1.0 / (n_obs as f64).sqrt();
    Ok(DgpConfig {
        theta_bar,
        rho: 0.99,
        state_scale: scale,
        sv_mean: 0.1,
        sv_rho: 0.99,
        sv_scale: scale,
        schedule: default_schedule(n_obs, p)?,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpDraw {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub beta_true: DMatrix<f64>,
    pub sigma2_true: DVector<f64>,
}

impl DgpDraw {
    pub fn regression_data(&self) -> Result<RegressionData> {
        RegressionData::new(self.y.clone(), self.x.clone())
    }

    /// Re-indexes the draw as a forecasting panel in which row `t` holds
    /// `y_t` and the predictors that drive `y_{t+1}`. One period is lost.
    pub fn leading_indicator_panel(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.y.len();
        let y = self.y.rows(0, n - 1).into_owned();
        let z = self.x.rows(1, n - 1).into_owned();
        (y, z)
    }
}

pub fn simulate_dgp(config: &DgpConfig) -> Result<DgpDraw> {
    config.validate()?;
    let (n, p) = (config.n_obs(), config.n_predictors());
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut theta = config.theta_bar.clone();
    let mut log_var = config.sv_mean;
    let mut y = DVector::zeros(n);
    let mut x = DMatrix::zeros(n, p);
    let mut beta = DMatrix::zeros(n, p);
    let mut sigma2 = DVector::zeros(n);

    for t in 0..n {
        log_var = config.sv_mean
            + config.sv_rho * (log_var - config.sv_mean)
            + config.sv_scale * normal();
        for j in 0..p {
            let level = config.theta_bar[j];
            theta[j] = level + config.rho * (theta[j] - level) + config.state_scale * normal();
        }
        for j in 0..p {
            x[(t, j)] = normal();
        }
        let eps = normal();
        let mut mean = 0.0;
        for j in 0..p {
            if config.schedule[(t, j)] {
                beta[(t, j)] = theta[j];
                mean += theta[j] * x[(t, j)];
            }
        }
        sigma2[t] = log_var.exp();
        y[t] = mean + sigma2[t].sqrt() * eps;
    }
    Ok(DgpDraw {
        y,
        x,
        beta_true: beta,
        sigma2_true: sigma2,
    })
}

/// Mean squared deviation between two coefficient paths, averaged over
/// periods and predictors.
pub fn msd(beta_true: &DMatrix<f64>, beta_est: &DMatrix<f64>) -> Result<f64> {
    if beta_true.shape() != beta_est.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            beta_true.shape(),
            beta_est.shape()
        )));
    }
    if beta_true.is_empty() {
        return Err(Error::invalid("msd of empty paths"));
    }
    let total: f64 = beta_true
        .iter()
        .zip(beta_est.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(total / beta_true.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSpec {
    pub n_obs: usize,
    pub n_predictors: usize,
    pub replications: usize,
    pub seed: u64,
    pub prior: PriorConfig,
    pub options: FitOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    /// `None` when the fit aborted.
    pub msd: Option<f64>,
    pub wall_ms: f64,
    pub converged: bool,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub n_obs: usize,
    pub n_predictors: usize,
    pub replications: usize,
    pub n_failed: usize,
    pub mean_msd: f64,
    pub median_msd: f64,
    /// Sum over successful replications.
    pub sum_msd: f64,
    pub mean_wall_ms: f64,
    pub records: Vec<ReplicationRecord>,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

pub fn run_monte_carlo(spec: &MonteCarloSpec) -> Result<MonteCarloSummary> {
    run_monte_carlo_with(spec, |_, _| ()).map(|(summary, _)| summary)
}

/// Runs the Monte Carlo and additionally hands each successful
/// `(draw, fit)` pair to `inspect`, returning its outputs in replication
/// order.
pub fn run_monte_carlo_with<X, F>(
    spec: &MonteCarloSpec,
    inspect: F,
) -> Result<(MonteCarloSummary, Vec<Option<X>>)>
where
    X: Send,
    F: Fn(&DgpDraw, &FitResult) -> X + Sync,
{
    if spec.replications == 0 {
        return Err(Error::invalid("replications must be at least 1"));
    }
    spec.prior.validate()?;
    spec.options.validate()?;
    // Surface config errors before spawning work.
    default_config(spec.n_obs, spec.n_predictors, spec.seed)?;

    let outcomes: Vec<(ReplicationRecord, Option<X>)> = (0..spec.replications)
        .into_par_iter()
        .map(|r| {
            let seed = spec.seed.wrapping_add(r as u64);
            let started = Instant::now();
            let attempt = default_config(spec.n_obs, spec.n_predictors, seed)
                .and_then(|cfg| simulate_dgp(&cfg))
                .and_then(|draw| {
                    let data = draw.regression_data()?;
                    let fit = fit_vbdvs(&data, &spec.prior, &spec.options)?;
                    let m = msd(&draw.beta_true, &fit.coefficient_means())?;
                    Ok((draw, fit, m))
                });
            let wall_ms = started.elapsed().as_secs_f64() * 1e3;
            match attempt {
                Ok((draw, fit, m)) => {
                    let extra = inspect(&draw, &fit);
                    let record = ReplicationRecord {
                        replication: r,
                        seed,
                        msd: Some(m),
                        wall_ms,
                        converged: fit.converged,
                        iterations: fit.iterations_run,
                        error: None,
                    };
                    (record, Some(extra))
                }
                Err(e) => (
                    ReplicationRecord {
                        replication: r,
                        seed,
                        msd: None,
                        wall_ms,
                        converged: false,
                        iterations: 0,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();

    let (records, extras): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let mut ok: Vec<f64> = records.iter().filter_map(|r| r.msd).collect();
    let n_failed = records.len() - ok.len();
    let sum_msd: f64 = ok.iter().sum();
    let mean_msd = if ok.is_empty() {
        f64::NAN
    } else {
        sum_msd / ok.len() as f64
    };
    let timed: Vec<f64> = records
        .iter()
        .filter(|r| r.msd.is_some())
        .map(|r| r.wall_ms)
        .collect();
    let mean_wall_ms = if timed.is_empty() {
        f64::NAN
    } else {
        timed.iter().sum::<f64>() / timed.len() as f64
    };
    let summary = MonteCarloSummary {
        n_obs: spec.n_obs,
        n_predictors: spec.n_predictors,
        replications: spec.replications,
        n_failed,
        mean_msd,
        median_msd: median(&mut ok),
        sum_msd,
        mean_wall_ms,
        records,
    };
    Ok((summary, extras))
}
