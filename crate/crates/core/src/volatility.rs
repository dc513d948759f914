//! Stochastic volatility by variance discounting.
//!
//! The precision `phi_t = 1/sigma2_t` has a Gamma(a_t, b_t) posterior. Moving
//! to the next period multiplies both parameters by `delta`, which keeps the
//! mean and inflates the dispersion; the backward pass is an exponential
//! smoother with the same factor.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DELTA: f64 = 0.8;

/// Filtered Gamma parameters and smoothed precisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPath {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub phi_filt: Vec<f64>,
    pub phi_smooth: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub delta: f64,
    pub a0: f64,
    pub b0: f64,
}

/// Output of [`filter_precision`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredPrecision {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub phi_filt: Vec<f64>,
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "discount factor {delta} must lie in (0, 1]"
        )))
    }
}

/// `a_t = delta a_{t-1} + 1/2`, `b_t = delta b_{t-1} + R_t / 2`.
pub fn filter_precision(r: &[f64], a0: f64, b0: f64, delta: f64) -> Result<FilteredPrecision> {
    check_delta(delta)?;
    if !(a0 > 0.0 && b0 > 0.0) {
        return Err(Error::invalid(
            "initial Gamma shape and rate must be positive",
        ));
    }
    if let Some(t) = r.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!(
            "squared error R[{t}] = {} is not a finite nonnegative value",
            r[t]
        )));
    }
    let mut a = Vec::with_capacity(r.len());
    let mut b = Vec::with_capacity(r.len());
    let (mut a_prev, mut b_prev) = (a0, b0);
    for &rt in r {
        a_prev = delta * a_prev + 0.5;
        b_prev = delta * b_prev + 0.5 * rt;
        a.push(a_prev);
        b.push(b_prev);
    }
    let phi_filt = a.iter().zip(&b).map(|(a, b)| a / b).collect();
    Ok(FilteredPrecision { a, b, phi_filt })
}

/// `phi~_t = (1 - delta) phi^_t + delta phi~_{t+1}`, `phi~_T = phi^_T`.
pub fn smooth_precision(phi_filt: &[f64], delta: f64) -> Result<Vec<f64>> {
    check_delta(delta)?;
    let mut out = phi_filt.to_vec();
    for t in (0..out.len().saturating_sub(1)).rev() {
        out[t] = (1.0 - delta) * phi_filt[t] + delta * out[t + 1];
    }
    Ok(out)
}

pub fn precision_to_variance(phi_smooth: &[f64]) -> Result<Vec<f64>> {
    phi_smooth
        .iter()
        .enumerate()
        .map(|(t, phi)| {
            if *phi > 0.0 && phi.is_finite() {
                Ok(1.0 / phi)
            } else {
                Err(Error::numerical(format!(
                    "precision {phi} at t={} is not positive",
                    t + 1
                )))
            }
        })
        .collect()
}

impl PrecisionPath {
    /// Filter, smooth and invert in one go.
    pub fn estimate(r: &DVector<f64>, a0: f64, b0: f64, delta: f64) -> Result<Self> {
        let FilteredPrecision { a, b, phi_filt } = filter_precision(r.as_slice(), a0, b0, delta)?;
        let phi_smooth = smooth_precision(&phi_filt, delta)?;
        let sigma2 = precision_to_variance(&phi_smooth)?;
        Ok(Self {
            a,
            b,
            phi_filt,
            phi_smooth,
            sigma2,
            delta,
            a0,
            b0,
        })
    }

    pub fn terminal_variance(&self) -> Option<f64> {
        self.sigma2.last().copied()
    }
}
