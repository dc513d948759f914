//! Stationarity transforms, outlier cleaning and target construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transformation codes used for macro panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TransformCode {
    Level,
    Diff,
    Diff2,
    Log,
    LogDiff,
    LogDiff2,
    PctChangeDiff,
}

impl TransformCode {
    /// Observations lost at the start of the series.
    pub fn order(self) -> usize {
        match self {
            Self::Level | Self::Log => 0,
            Self::Diff | Self::LogDiff => 1,
            Self::Diff2 | Self::LogDiff2 | Self::PctChangeDiff => 2,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::Level => 1,
            Self::Diff => 2,
            Self::Diff2 => 3,
            Self::Log => 4,
            Self::LogDiff => 5,
            Self::LogDiff2 => 6,
            Self::PctChangeDiff => 7,
        }
    }
}

impl TryFrom<u8> for TransformCode {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self> {
        Ok(match code {
            1 => Self::Level,
            2 => Self::Diff,
            3 => Self::Diff2,
            4 => Self::Log,
            5 => Self::LogDiff,
            6 => Self::LogDiff2,
            7 => Self::PctChangeDiff,
            other => return Err(Error::invalid(format!("unknown transform code {other}"))),
        })
    }
}

impl From<TransformCode> for u8 {
    fn from(c: TransformCode) -> u8 {
        c.code()
    }
}

fn diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

fn log_checked(x: &[f64]) -> Result<Vec<f64>> {
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            if *v > 0.0 {
                Ok(v.ln())
            } else {
                Err(Error::invalid(format!(
                    "log transform needs positive values; entry {i} is {v}"
                )))
            }
        })
        .collect()
}

/// Applies `code`; the output is shorter by `code.order()` entries.
pub fn apply_transform(series: &[f64], code: TransformCode) -> Result<Vec<f64>> {
    if series.len() <= code.order() {
        return Err(Error::invalid(format!(
            "series of length {} is too short for transform code {}",
            series.len(),
            code.code()
        )));
    }
    Ok(match code {
        TransformCode::Level => series.to_vec(),
        TransformCode::Diff => diff(series),
        TransformCode::Diff2 => diff(&diff(series)),
        TransformCode::Log => log_checked(series)?,
        TransformCode::LogDiff => diff(&log_checked(series)?),
        TransformCode::LogDiff2 => diff(&diff(&log_checked(series)?)),
        TransformCode::PctChangeDiff => {
            if let Some(i) = series[..series.len() - 1].iter().position(|v| *v == 0.0) {
                return Err(Error::invalid(format!(
                    "percent change undefined after zero at entry {i}"
                )));
            }
            let pct: Vec<f64> = series.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
            diff(&pct)
        }
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn median_of(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

pub const DEFAULT_OUTLIER_KAPPA: f64 = 4.5;

/// Replaces every `y_t` with `|y_t - median| / iqr > kappa` by the median of
/// the (up to) five preceding raw observations.
///
/// Median and interquartile range come from the raw series once; an iqr of
/// zero disables the rule. A flagged first observation has no predecessors
/// and is left as is.
pub fn remove_outliers(series: &[f64], kappa: f64) -> Result<Vec<f64>> {
    if series.len() < 6 {
        return Err(Error::invalid(format!(
            "outlier rule needs at least 6 observations, got {}",
            series.len()
        )));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = quantile_sorted(&sorted, 0.5);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    if iqr <= 0.0 {
        return Ok(series.to_vec());
    }
    let mut out = series.to_vec();
    for t in 1..series.len() {
        if (series[t] - median).abs() / iqr > kappa {
            out[t] = median_of(&series[t.saturating_sub(5)..t]);
        }
    }
    Ok(out)
}

/// `(400 / h) * ln(P_{t+h} / P_t)` for every `t` with `t + h` in range.
/// Entry `i` of the output is dated `i + h`.
pub fn build_target(prices: &[f64], h: usize) -> Result<Vec<f64>> {
    if h == 0 {
        return Err(Error::invalid("horizon must be positive"));
    }
    if let Some(i) = prices.iter().position(|p| !(*p > 0.0)) {
        return Err(Error::invalid(format!(
            "price at index {i} is not positive"
        )));
    }
    if prices.len() <= h {
        return Err(Error::invalid("price series shorter than the horizon"));
    }
    let scale = 400.0 / h as f64;
    Ok((0..prices.len() - h)
        .map(|t| scale * (prices[t + h] / prices[t]).ln())
        .collect())
}
