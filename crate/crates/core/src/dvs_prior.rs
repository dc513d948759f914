//! Closed-form variational updates for the dynamic spike-and-slab prior.
//!
//! Each coefficient `beta_{j,t}` is a mixture of a spike `N(0, c * tau2)` and a
//! slab `N(0, tau2)` with inclusion indicator `gamma_{j,t} ~ Bernoulli(pi0_t)`,
//! `1/tau2 ~ Gamma(g0, h0)` and `pi0_t ~ Beta(1, 1)`. Given smoothed state
//! means every update below is a scalar formula.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed hyperparameters of the selection prior and of the random-walk
/// state variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvsHyper {
    /// Spike-to-slab variance ratio, `0 < c_spike < 1`.
    pub c_spike: f64,
    pub g0: f64,
    pub h0: f64,
    pub c0: f64,
    pub d0: f64,
}

impl DvsHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_spike > 0.0 && self.c_spike < 1.0) {
            return Err(Error::invalid(format!(
                "c_spike = {} must lie in (0, 1)",
                self.c_spike
            )));
        }
        for (name, v) in [
            ("g0", self.g0),
            ("h0", self.h0),
            ("c0", self.c0),
            ("d0", self.d0),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// Posterior mean of `1/tau2_{j,t}`: `(g0 + 1/2) / (h0 + m^2 / 2)`.
pub fn update_tau2_inv(m: f64, hyper: &DvsHyper) -> f64 {
    (hyper.g0 + 0.5) / (hyper.h0 + 0.5 * m * m)
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Posterior inclusion probability for one coefficient.
///
/// Evaluates the slab/spike log-density ratio at `m` and adds the prior
/// log-odds, so a spike density that underflows is never formed.
pub fn update_gamma(m: f64, tau2: f64, pi0_prev: f64, c_spike: f64) -> f64 {
    if pi0_prev <= 0.0 {
        return 0.0;
    }
    if pi0_prev >= 1.0 {
        return 1.0;
    }
    // log N(m|0,tau2) - log N(m|0,c*tau2)
    let log_ratio = 0.5 * c_spike.ln() + 0.5 * m * m / tau2 * (1.0 / c_spike - 1.0);
    let log_odds = log_ratio + pi0_prev.ln() - (-pi0_prev).ln_1p();
    logistic(log_odds)
}

/// `(1 - gamma)^2 * c * tau2 + gamma * tau2`.
pub fn update_v(gamma: f64, tau2: f64, c_spike: f64) -> f64 {
    let spike = 1.0 - gamma;
    spike * spike * c_spike * tau2 + gamma * tau2
}

/// `(1 + sum_j gamma_j) / (2 + p)`.
pub fn update_pi0(pip_row: &[f64]) -> f64 {
    let p = pip_row.len() as f64;
    (1.0 + pip_row.iter().sum::<f64>()) / (2.0 + p)
}

/// Posterior mean of `1/w_{j,t}`: `(c0 + 1/2) / (d0 + D_jj / 2)`, with the
/// squared error clamped at zero.
pub fn update_w_inv(d_jj: f64, hyper: &DvsHyper) -> f64 {
    (hyper.c0 + 0.5) / (hyper.d0 + 0.5 * d_jj.max(0.0))
}

/// Posterior means of every selection-prior quantity, T x p (or T).
#[derive(Debug, Clone, PartialEq)]
pub struct DvsState {
    pub tau2_inv: DMatrix<f64>,
    pub pip: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub pi0: DVector<f64>,
    pub w_inv: DMatrix<f64>,
}

impl DvsState {
    pub fn n_periods(&self) -> usize {
        self.pip.nrows()
    }

    /// Sweeps every `(j, t)` in the fixed order `1/tau2, gamma, v, 1/w`,
    /// then refreshes `pi0_t` from the new `gamma` row. `pi0_prev` is the
    /// previous iteration's `pi0`.
    pub fn sweep(
        m_smooth: &DMatrix<f64>,
        d_diag: &DMatrix<f64>,
        pi0_prev: &DVector<f64>,
        hyper: &DvsHyper,
    ) -> Result<Self> {
        let (n, p) = m_smooth.shape();
        if d_diag.shape() != (n, p) || pi0_prev.len() != n {
            return Err(Error::invalid(
                "selection sweep inputs have inconsistent shapes",
            ));
        }
        let mut tau2_inv = DMatrix::zeros(n, p);
        let mut pip = DMatrix::zeros(n, p);
        let mut v = DMatrix::zeros(n, p);
        let mut w_inv = DMatrix::zeros(n, p);
        let mut pi0 = DVector::zeros(n);
        let mut row = vec![0.0; p];
        for t in 0..n {
            for j in 0..p {
                let m = m_smooth[(t, j)];
                let ti = update_tau2_inv(m, hyper);
                let tau2 = 1.0 / ti;
                let g = update_gamma(m, tau2, pi0_prev[t], hyper.c_spike);
                tau2_inv[(t, j)] = ti;
                pip[(t, j)] = g;
                v[(t, j)] = update_v(g, tau2, hyper.c_spike);
                w_inv[(t, j)] = update_w_inv(d_diag[(t, j)], hyper);
                row[j] = g;
            }
            pi0[t] = update_pi0(&row);
        }
        Ok(Self {
            tau2_inv,
            pip,
            v,
            pi0,
            w_inv,
        })
    }

    /// Checks the elementwise ranges every iteration must respect.
    pub fn check_invariants(&self) -> Result<()> {
        let p = self.pip.ncols() as f64;
        let (lo, hi) = (1.0 / (2.0 + p), (1.0 + p) / (2.0 + p));
        if let Some(g) = self.pip.iter().find(|g| !(**g >= 0.0 && **g <= 1.0)) {
            return Err(Error::numerical(format!(
                "inclusion probability {g} outside [0, 1]"
            )));
        }
        // A few ulps of slack: the bounds are attained exactly at all-0 / all-1 rows.
        let slack = 1e-12;
        if let Some(q) = self
            .pi0
            .iter()
            .find(|q| !(**q >= lo - slack && **q <= hi + slack))
        {
            return Err(Error::numerical(format!("pi0 = {q} outside [{lo}, {hi}]")));
        }
        for (name, m) in [
            ("tau2_inv", &self.tau2_inv),
            ("v", &self.v),
            ("w_inv", &self.w_inv),
        ] {
            if let Some(x) = m.iter().find(|x| !(**x > 0.0) || x.is_nan()) {
                return Err(Error::numerical(format!(
                    "{name} entry {x} is not positive"
                )));
            }
        }
        Ok(())
    }
}
