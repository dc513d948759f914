//! Direct h-step forecasting, the AR benchmark and out-of-sample scoring.

use nalgebra::{DMatrix, DVector, RowDVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::RegressionData;
use crate::error::{Error, Result};
use crate::estimator::{fit_vbdvs, FitOptions, FitResult, PriorConfig};
use crate::pipeline::factors::{factors_from_panel, standardize};

/// Floor on the benchmark predictive variance.
pub const OLS_VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastTask {
    pub horizon: usize,
    #[serde(default = "default_lags")]
    pub lags: usize,
    /// Fraction of the sample used before the first forecast origin.
    #[serde(default = "default_window")]
    pub window: f64,
    /// When set, the target at origin `t` is the average of the next `h`
    /// one-period values, i.e. `(400/h) ln(P_{t+h}/P_t)` when the series is
    /// `400 ln(P_t/P_{t-1})`. Otherwise it is `y_{t+h}`.
    #[serde(default)]
    pub target_transform: bool,
}

fn default_lags() -> usize {
    2
}

fn default_window() -> f64 {
    0.5
}

impl ForecastTask {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            lags: default_lags(),
            window: default_window(),
            target_transform: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("forecast horizon must be positive"));
        }
        if !(self.window > 0.0 && self.window < 1.0) {
            return Err(Error::invalid(format!(
                "window fraction {} must lie in (0, 1)",
                self.window
            )));
        }
        Ok(())
    }

    fn first_row(&self) -> usize {
        self.lags.saturating_sub(1)
    }
}

/// Value to be forecast from origin `t`, if it has been observed.
pub fn direct_target(y: &[f64], t: usize, task: &ForecastTask) -> Option<f64> {
    let h = task.horizon;
    if t + h >= y.len() {
        return None;
    }
    Some(if task.target_transform {
        y[t + 1..=t + h].iter().sum::<f64>() / h as f64
    } else {
        y[t + h]
    })
}

/// `(1, y_t, ..., y_{t-lags+1}, x_t)`.
pub fn regressor_row(y: &[f64], x: &DMatrix<f64>, t: usize, lags: usize) -> Result<Vec<f64>> {
    if t >= y.len() || t >= x.nrows() || t + 1 < lags {
        return Err(Error::invalid(format!(
            "no regressors available at origin {t}"
        )));
    }
    let mut row = Vec::with_capacity(1 + lags + x.ncols());
    row.push(1.0);
    row.extend((0..lags).map(|l| y[t - l]));
    row.extend(x.row(t).iter());
    Ok(row)
}

/// Regression rows with their origin indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectDataset {
    pub data: RegressionData,
    pub origins: Vec<usize>,
}

/// Pairs the direct target from origin `t` with the regressors dated `t`,
/// for every origin whose target is observed.
pub fn build_direct_dataset(
    y: &[f64],
    x: &DMatrix<f64>,
    task: &ForecastTask,
) -> Result<DirectDataset> {
    task.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "target has {} observations but predictors have {} rows",
            y.len(),
            x.nrows()
        )));
    }
    let first = task.first_row();
    if y.len() < first + task.horizon + 1 {
        return Err(Error::invalid(format!(
            "{} observations are too few for horizon {} with {} lags",
            y.len(),
            task.horizon,
            task.lags
        )));
    }
    let origins: Vec<usize> = (first..y.len() - task.horizon).collect();
    let mut targets = Vec::with_capacity(origins.len());
    let mut rows = Vec::with_capacity(origins.len());
    for &t in &origins {
        targets.push(direct_target(y, t, task).expect("origin range keeps the target in sample"));
        rows.push(regressor_row(y, x, t, task.lags)?);
    }
    Ok(DirectDataset {
        data: RegressionData::from_rows(targets, &rows)?,
        origins,
    })
}

/// Gaussian predictive mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predictive {
    pub point: f64,
    pub variance: f64,
}

pub fn gaussian_log_density(y: f64, mean: f64, variance: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * variance).ln() + (y - mean).powi(2) / variance)
}

impl Predictive {
    pub fn log_density(&self, y: f64) -> f64 {
        gaussian_log_density(y, self.point, self.variance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub origin: usize,
    pub point: f64,
    pub variance: f64,
    pub realized: f64,
    pub log_pred_lik: f64,
}

impl ForecastRecord {
    pub fn new(origin: usize, pred: Predictive, realized: f64) -> Self {
        Self {
            origin,
            point: pred.point,
            variance: pred.variance,
            realized,
            log_pred_lik: pred.log_density(realized),
        }
    }
}

/// `x m_{T|T}` with variance `x P_{T|T} x' + sigma2_T`.
pub fn forecast_vbdvs(fit: &FitResult, x_origin: &[f64]) -> Result<Predictive> {
    let (m, p) = match (fit.states.m_smooth.last(), fit.states.p_smooth.last()) {
        (Some(m), Some(p)) => (m, p),
        _ => return Err(Error::invalid("fit has no smoothed moments")),
    };
    if x_origin.len() != m.len() {
        return Err(Error::invalid(format!(
            "origin row has {} entries, the fit has {} coefficients",
            x_origin.len(),
            m.len()
        )));
    }
    let x = DVector::from_column_slice(x_origin);
    let point = x.dot(m);
    let variance = (p * &x).dot(&x) + fit.terminal_variance();
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::numerical(format!(
            "predictive variance {variance} is not positive"
        )));
    }
    Ok(Predictive { point, variance })
}

/// Least-squares coefficients and residual variance.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coef: DVector<f64>,
    /// Residual sum of squares over `T - k`, floored.
    pub resid_var: f64,
}

pub fn ols(data: &RegressionData) -> Result<OlsFit> {
    let (n, k) = (data.n_obs(), data.n_predictors());
    if n <= k {
        return Err(Error::invalid(format!(
            "OLS with {k} regressors needs more than {k} rows, got {n}"
        )));
    }
    let svd = data.x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-10) {
        return Err(Error::numerical(format!(
            "design matrix is rank deficient (singular values {smax:e} .. {smin:e})"
        )));
    }
    let coef = svd
        .solve(&data.y, 0.0)
        .map_err(|e| Error::numerical(e.to_string()))?;
    let resid = &data.y - &data.x * &coef;
    let resid_var = (resid.norm_squared() / (n - k) as f64).max(OLS_VARIANCE_FLOOR);
    Ok(OlsFit { coef, resid_var })
}

pub fn ols_direct_forecast(data: &RegressionData, x_origin: &[f64]) -> Result<Predictive> {
    let fit = ols(data)?;
    if x_origin.len() != fit.coef.len() {
        return Err(Error::invalid(
            "origin row does not match the regression design",
        ));
    }
    Ok(Predictive {
        point: RowDVector::from_row_slice(x_origin).dot(&fit.coef.transpose()),
        variance: fit.resid_var,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub msfe: f64,
    pub alpl: f64,
    pub rel_msfe: f64,
    pub rel_alpl: f64,
}

/// Mean squared forecast error and average log predictive likelihood.
pub fn score(records: &[ForecastRecord]) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::invalid("no forecast records to score"));
    }
    let n = records.len() as f64;
    let msfe = records
        .iter()
        .map(|r| (r.realized - r.point).powi(2))
        .sum::<f64>()
        / n;
    let alpl = records.iter().map(|r| r.log_pred_lik).sum::<f64>() / n;
    Ok((msfe, alpl))
}

pub fn evaluate_oos(model: &[ForecastRecord], benchmark: &[ForecastRecord]) -> Result<EvalSummary> {
    if model.len() != benchmark.len()
        || model
            .iter()
            .zip(benchmark)
            .any(|(a, b)| a.origin != b.origin)
    {
        return Err(Error::invalid(
            "model and benchmark forecasts are not aligned on origins",
        ));
    }
    let (msfe, alpl) = score(model)?;
    let (msfe_b, alpl_b) = score(benchmark)?;
    Ok(EvalSummary {
        msfe,
        alpl,
        rel_msfe: msfe / msfe_b,
        rel_alpl: alpl - alpl_b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Intercept and own lags by OLS.
    Ar,
    Vbdvs,
}

/// One forecasting model. VBDVS models use either `factors` principal
/// components of the factor-flagged predictors or, when unset, every
/// standardized predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    #[serde(default)]
    pub factors: Option<usize>,
    /// Overrides the slab-scale hyperparameter of the prior.
    #[serde(default)]
    pub h0: Option<f64>,
}

impl ModelSpec {
    pub fn ar() -> Self {
        Self {
            name: "AR".into(),
            kind: ModelKind::Ar,
            factors: None,
            h0: None,
        }
    }

    pub fn vbdvs_factors(k: usize, h0: f64) -> Self {
        Self {
            name: format!("VBDVS/FAC{k}"),
            kind: ModelKind::Vbdvs,
            factors: Some(k),
            h0: Some(h0),
        }
    }

    pub fn fac5() -> Self {
        Self::vbdvs_factors(5, 1.0)
    }

    pub fn fac60() -> Self {
        Self::vbdvs_factors(60, 12.0)
    }

    pub fn all_predictors() -> Self {
        Self {
            name: "VBDVS/X".into(),
            kind: ModelKind::Vbdvs,
            factors: None,
            h0: Some(100.0),
        }
    }

    pub fn uses_factors(&self) -> bool {
        self.kind == ModelKind::Vbdvs && self.factors.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginFailure {
    pub origin: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowOutput {
    pub records: Vec<ForecastRecord>,
    pub failures: Vec<OriginFailure>,
}

/// Forecast origins for a sample of length `n`: from `floor(window n) - 1`
/// to the last origin whose target is observed.
pub fn forecast_origins(n: usize, task: &ForecastTask) -> Result<Vec<usize>> {
    task.validate()?;
    let first = ((task.window * n as f64).floor() as usize).saturating_sub(1);
    let min_first = task.first_row() + task.horizon;
    if first < min_first || first + task.horizon >= n {
        return Err(Error::invalid(format!(
            "sample of {n} observations is too short for the initial window"
        )));
    }
    Ok((first..n - task.horizon).collect())
}

fn forecast_at(
    y: &[f64],
    x: &DMatrix<f64>,
    t: usize,
    task: &ForecastTask,
    model: &ModelSpec,
    prior: &PriorConfig,
    opts: &FitOptions,
) -> Result<ForecastRecord> {
    let realized = direct_target(y, t, task)
        .ok_or_else(|| Error::invalid(format!("no realized value for origin {t}")))?;
    let y_in = &y[..=t];
    let x_in = x.rows(0, t + 1).into_owned();
    let block = match model.kind {
        ModelKind::Ar => DMatrix::zeros(t + 1, 0),
        ModelKind::Vbdvs => match model.factors {
            Some(k) => factors_from_panel(&x_in, k)?,
            None if x_in.ncols() == 0 => x_in,
            None => standardize(&x_in)?.x,
        },
    };
    let train = build_direct_dataset(y_in, &block, task)?;
    let row = regressor_row(y_in, &block, t, task.lags)?;
    let pred = match model.kind {
        ModelKind::Ar => ols_direct_forecast(&train.data, &row)?,
        ModelKind::Vbdvs => {
            let mut prior = prior.clone();
            if let Some(h0) = model.h0 {
                prior.h0 = h0;
            }
            let fit = fit_vbdvs(&train.data, &prior, opts)?;
            forecast_vbdvs(&fit, &row)?
        }
    };
    Ok(ForecastRecord::new(t, pred, realized))
}

/// Refits `model` at every origin of the expanding window. Only data dated
/// up to the origin enter each fit, including the factor extraction.
/// Failed origins are skipped and reported.
pub fn run_expanding_window(
    y: &[f64],
    x: &DMatrix<f64>,
    task: &ForecastTask,
    model: &ModelSpec,
    prior: &PriorConfig,
    opts: &FitOptions,
) -> Result<WindowOutput> {
    if x.nrows() != y.len() {
        return Err(Error::invalid("target and predictors differ in length"));
    }
    if let Some(k) = model.factors {
        if model.kind == ModelKind::Vbdvs && (k == 0 || k > x.ncols()) {
            return Err(Error::invalid(format!(
                "model {} asks for {k} factors from {} predictors",
                model.name,
                x.ncols()
            )));
        }
    }
    prior.validate()?;
    opts.validate()?;
    let origins = forecast_origins(y.len(), task)?;
    let outcomes: Vec<(usize, Result<ForecastRecord>)> = origins
        .into_par_iter()
        .map(|t| (t, forecast_at(y, x, t, task, model, prior, opts)))
        .collect();
    let mut out = WindowOutput::default();
    for (origin, outcome) in outcomes {
        match outcome {
            Ok(r) => out.records.push(r),
            Err(e) => out.failures.push(OriginFailure {
                origin,
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Restricts `records` to the given origins, keeping order.
pub fn restrict_to_origins(records: &[ForecastRecord], origins: &[usize]) -> Vec<ForecastRecord> {
    records
        .iter()
        .filter(|r| origins.contains(&r.origin))
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|t| t as f64).collect()
    }

    #[test]
    fn dataset_shape_and_alignment() {
        let y = ramp(10);
        let x = DMatrix::from_fn(10, 2, |t, j| 100.0 * (j + 1) as f64 + t as f64);
        let d = build_direct_dataset(&y, &x, &ForecastTask::new(1)).unwrap();
        assert_eq!(d.data.n_obs(), 8);
        assert!(d.data.x.column(0).iter().all(|v| *v == 1.0));
        let d2 = build_direct_dataset(&y, &x, &ForecastTask::new(2)).unwrap();
        let i = d2.origins.iter().position(|o| *o == 5).unwrap();
        assert_eq!(d2.data.y[i], 7.0);
        assert_eq!(d2.data.x[(i, 1)], 5.0);
        assert_eq!(d2.data.x[(i, 2)], 4.0);
        assert_eq!(d2.data.x[(i, 3)], 105.0);
        assert!(
            build_direct_dataset(&y[..3], &x.rows(0, 3).into_owned(), &ForecastTask::new(2))
                .is_err()
        );
    }

    #[test]
    fn averaged_target() {
        let mut task = ForecastTask::new(2);
        task.target_transform = true;
        assert_eq!(direct_target(&[0.0, 1.0, 3.0, 5.0], 1, &task), Some(4.0));
        assert_eq!(direct_target(&[0.0, 1.0, 3.0], 1, &task), None);
    }

    #[test]
    fn standard_normal_log_density() {
        let p = Predictive {
            point: 0.0,
            variance: 1.0,
        };
        assert_abs_diff_eq!(p.log_density(0.0), -0.918938533204672, epsilon = 1e-12);
    }

    #[test]
    fn ols_exact_ar1() {
        let mut y = vec![0.3];
        for t in 1..30 {
            y.push(1.0 + 0.5 * y[t - 1]);
        }
        let mut task = ForecastTask::new(1);
        task.lags = 1;
        let d = build_direct_dataset(&y, &DMatrix::zeros(30, 0), &task).unwrap();
        let fit = ols(&d.data).unwrap();
        assert_abs_diff_eq!(fit.coef[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(fit.coef[1], 0.5, epsilon = 1e-8);
        assert_eq!(fit.resid_var, OLS_VARIANCE_FLOOR);
    }

    #[test]
    fn ols_rank_deficient() {
        let data =
            RegressionData::from_rows(vec![1.0, 2.0, 3.0, 4.0], &vec![vec![1.0, 2.0]; 4]).unwrap();
        assert!(ols(&data).unwrap_err().is_numerical());
    }

    #[test]
    fn hand_scored_records() {
        let mk = |origin, point, realized| {
            ForecastRecord::new(
                origin,
                Predictive {
                    point,
                    variance: 1.0,
                },
                realized,
            )
        };
        let model = [mk(3, 1.0, 2.0), mk(4, 0.0, 0.0)];
        let bench = [mk(3, 0.0, 2.0), mk(4, 1.0, 0.0)];
        let e = evaluate_oos(&model, &bench).unwrap();
        assert_abs_diff_eq!(e.msfe, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(e.rel_msfe, 0.5 / 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            e.rel_alpl,
            0.5 * (-0.5 - 0.0) - 0.5 * (-2.0 - 0.5),
            epsilon = 1e-12
        );
        let same = evaluate_oos(&bench, &bench).unwrap();
        assert_eq!(same.rel_msfe, 1.0);
        assert_eq!(same.rel_alpl, 0.0);
        assert!(evaluate_oos(&model, &bench[..1]).is_err());
        assert!(evaluate_oos(&[mk(5, 0.0, 0.0)], &[mk(6, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn origin_count() {
        assert_eq!(
            forecast_origins(40, &ForecastTask::new(1)).unwrap().len(),
            20
        );
        assert_eq!(forecast_origins(40, &ForecastTask::new(1)).unwrap()[0], 19);
        assert!(forecast_origins(4, &ForecastTask::new(2)).is_err());
    }
}
