//! Outer variational fixed-point loop.
//!
//! One iteration runs, in order: prior combination, Kalman filter, RTS
//! smoother, squared-error summaries, the selection-prior sweep, and the
//! discounted volatility filter/smoother. Iteration stops once the largest
//! change in any smoothed coefficient mean falls below `tol`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::RegressionData;
use crate::dvs_prior::{update_w_inv, DvsHyper, DvsState};
use crate::error::{Error, Result};
use crate::statespace::{self, StateMoments, SystemSequences};
use crate::volatility::{PrecisionPath, DEFAULT_DELTA};

/// Fixed hyperparameters of the full model.
///
/// An empty `m0` stands for the zero vector of whatever dimension the data
/// has; otherwise its length must equal the predictor count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default)]
    pub m0: Vec<f64>,
    pub p0_scale: f64,
    pub a0: f64,
    pub b0: f64,
    pub c0: f64,
    pub d0: f64,
    pub g0: f64,
    pub h0: f64,
    pub c_spike: f64,
    pub delta: f64,
}

impl PriorConfig {
    fn table(g0: f64, h0: f64, c0: f64) -> Self {
        Self {
            m0: Vec::new(),
            p0_scale: 4.0,
            a0: 0.01,
            b0: 0.01,
            c0,
            d0: 1.0,
            g0,
            h0,
            c_spike: 1e-4,
            delta: DEFAULT_DELTA,
        }
    }

    /// Tight random-walk variances, flat slab scale.
    pub fn prior1() -> Self {
        Self::table(0.01, 0.01, 100.0)
    }

    /// Loose random-walk variances, flat slab scale.
    pub fn prior2() -> Self {
        Self::table(0.01, 0.01, 1.0)
    }

    /// Tight random-walk variances, informative slab scale. The default.
    pub fn prior3() -> Self {
        Self::table(1.0, 12.0, 100.0)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "prior1" => Some(Self::prior1()),
            "prior2" => Some(Self::prior2()),
            "prior3" => Some(Self::prior3()),
            _ => None,
        }
    }

    pub fn hyper(&self) -> DvsHyper {
        DvsHyper {
            c_spike: self.c_spike,
            g0: self.g0,
            h0: self.h0,
            c0: self.c0,
            d0: self.d0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper().validate()?;
        if !(self.p0_scale > 0.0 && self.p0_scale.is_finite()) {
            return Err(Error::invalid("p0_scale must be positive"));
        }
        if !(self.a0 > 0.0 && self.b0 > 0.0) {
            return Err(Error::invalid("a0 and b0 must be positive"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::invalid(format!(
                "delta = {} must lie in (0, 1]",
                self.delta
            )));
        }
        if self.m0.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("m0 must be finite"));
        }
        Ok(())
    }

    pub fn initial_mean(&self, p: usize) -> Result<DVector<f64>> {
        match self.m0.len() {
            0 => Ok(DVector::zeros(p)),
            n if n == p => Ok(DVector::from_column_slice(&self.m0)),
            n => Err(Error::invalid(format!(
                "m0 has length {n} but there are {p} predictors"
            ))),
        }
    }

    pub fn initial_covariance(&self, p: usize) -> DMatrix<f64> {
        DMatrix::identity(p, p) * self.p0_scale
    }
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self::prior3()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence threshold on the largest absolute change in a smoothed mean.
    pub tol: f64,
    /// When set, the measurement variance is held at this value.
    #[serde(default)]
    pub fixed_sigma2: Option<f64>,
    /// When off, `F = I`, `W = diag(w)` and only `1/w` is updated.
    pub dvs_enabled: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-4,
            fixed_sigma2: None,
            dvs_enabled: true,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        if let Some(s) = self.fixed_sigma2 {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid("fixed_sigma2 must be positive"));
            }
        }
        Ok(())
    }
}

/// Converged (or last-iteration) posterior quantities.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub states: StateMoments,
    /// With selection disabled only `w_inv` is estimated; `pip` is then 1
    /// and `v` infinite everywhere.
    pub dvs: DvsState,
    /// `None` when the measurement variance was held fixed.
    pub vol: Option<PrecisionPath>,
    /// Measurement variances that will feed the next filter pass.
    pub sigma2: DVector<f64>,
    pub iterations_run: usize,
    pub final_delta: f64,
    pub converged: bool,
    /// Convergence measure after every iteration.
    pub delta_history: Vec<f64>,
}

impl FitResult {
    pub fn coefficient_means(&self) -> DMatrix<f64> {
        self.states.smoothed_mean_matrix()
    }

    /// Smoothed measurement variance at the last sample period.
    pub fn terminal_variance(&self) -> f64 {
        self.sigma2[self.sigma2.len() - 1]
    }
}

/// Starting values for `(1/w, v, sigma2, pi0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub w_inv: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub sigma2: DVector<f64>,
    pub pi0: DVector<f64>,
}

/// Prior-mean precisions, a slab-leaning `v`, the sample variance of `y` and
/// even inclusion odds.
pub fn initialize_state(data: &RegressionData, prior: &PriorConfig) -> Result<InitialState> {
    let (n, p) = (data.n_obs(), data.n_predictors());
    let var = data.y_variance();
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::invalid("y has zero sample variance"));
    }
    Ok(initial_values(n, p, prior, var))
}

fn initial_values(n: usize, p: usize, prior: &PriorConfig, sigma2: f64) -> InitialState {
    let v0 = (prior.h0 / prior.g0).max(10.0 * prior.c_spike);
    InitialState {
        w_inv: DMatrix::from_element(n, p, prior.c0 / prior.d0),
        v: DMatrix::from_element(n, p, v0),
        sigma2: DVector::from_element(n, sigma2),
        pi0: DVector::from_element(n, 0.5),
    }
}

fn stage<T>(iteration: usize, stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Numerical(_) => Error::FitAborted {
            iteration,
            stage,
            source: Box::new(e),
        },
        other => other,
    })
}

fn max_abs_change(current: &[DVector<f64>], previous: &[DVector<f64>]) -> f64 {
    current
        .iter()
        .zip(previous)
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Variational Bayes fit with dynamic variable selection and stochastic
/// volatility. `opts` can switch either block off.
pub fn fit_vbdvs(
    data: &RegressionData,
    prior: &PriorConfig,
    opts: &FitOptions,
) -> Result<FitResult> {
    prior.validate()?;
    opts.validate()?;
    let (n, p) = (data.n_obs(), data.n_predictors());
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    let m0 = prior.initial_mean(p)?;
    let p0 = prior.initial_covariance(p);
    let hyper = prior.hyper();

    // A fixed variance makes the sample variance irrelevant, so constant `y`
    // is only rejected when it would seed the volatility path.
    let init = match opts.fixed_sigma2 {
        Some(s) => initial_values(n, p, prior, s),
        None => initialize_state(data, prior)?,
    };
    let mut w_inv = init.w_inv;
    let mut v = init.v;
    let mut pi0 = init.pi0;
    let mut sigma2 = init.sigma2;

    let mut previous_means: Vec<DVector<f64>> = vec![m0.clone(); n];
    let mut delta_history = Vec::new();
    let mut last = None;

    for iteration in 1..=opts.max_iter {
        let sys = if opts.dvs_enabled {
            let v_inv = v.map(|x| 1.0 / x);
            let (f, w) = stage(
                iteration,
                "combine",
                statespace::combine_priors(&w_inv, &v_inv),
            )?;
            SystemSequences::new(f, w, sigma2.clone())
        } else {
            SystemSequences::random_walk(w_inv.map(|x| 1.0 / x), sigma2.clone())
        };
        let sys = stage(iteration, "system", sys)?;

        let filtered = stage(
            iteration,
            "kalman filter",
            statespace::kalman_filter(data, &sys, &m0, &p0),
        )?;
        let states = stage(
            iteration,
            "smoother",
            statespace::rts_smoother(filtered, &sys),
        )?;
        let summaries = stage(
            iteration,
            "error summaries",
            statespace::error_summaries(data, &states, &sys),
        )?;

        let dvs = if opts.dvs_enabled {
            let m = states.smoothed_mean_matrix();
            stage(
                iteration,
                "selection prior",
                DvsState::sweep(&m, &summaries.d_diag, &pi0, &hyper),
            )?
        } else {
            DvsState {
                tau2_inv: DMatrix::from_element(n, p, 0.0),
                pip: DMatrix::from_element(n, p, 1.0),
                v: DMatrix::from_element(n, p, f64::INFINITY),
                pi0: DVector::from_element(n, 1.0),
                w_inv: summaries.d_diag.map(|d| update_w_inv(d, &hyper)),
            }
        };
        if opts.dvs_enabled {
            stage(iteration, "selection prior", dvs.check_invariants())?;
        }

        let vol = match opts.fixed_sigma2 {
            Some(_) => None,
            None => Some(stage(
                iteration,
                "volatility",
                PrecisionPath::estimate(&summaries.r, prior.a0, prior.b0, prior.delta),
            )?),
        };

        let change = max_abs_change(&states.m_smooth, &previous_means);
        delta_history.push(change);
        previous_means.clone_from(&states.m_smooth);

        w_inv.clone_from(&dvs.w_inv);
        v.clone_from(&dvs.v);
        pi0.clone_from(&dvs.pi0);
        if let Some(path) = &vol {
            sigma2 = DVector::from_column_slice(&path.sigma2);
        }

        let converged = change <= opts.tol;
        last = Some(FitResult {
            states,
            dvs,
            vol,
            sigma2: sigma2.clone(),
            iterations_run: iteration,
            final_delta: change,
            converged,
            delta_history: Vec::new(),
        });
        if converged {
            break;
        }
    }

    let mut result = last.expect("max_iter >= 1");
    result.delta_history = delta_history;
    Ok(result)
}

/// Fixed measurement variance, no selection prior: Kalman smoothing
/// alternated with Gamma updates of the random-walk variances.
pub fn fit_simple_tvp(
    data: &RegressionData,
    prior: &PriorConfig,
    opts: &FitOptions,
) -> Result<FitResult> {
    if opts.fixed_sigma2.is_none() {
        return Err(Error::invalid("fit_simple_tvp needs fixed_sigma2"));
    }
    let opts = FitOptions {
        dvs_enabled: false,
        ..opts.clone()
    };
    fit_vbdvs(data, prior, &opts)
}
