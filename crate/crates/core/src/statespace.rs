//! Kalman filter and Rauch-Tung-Striebel smoother for the regression
//!
//! ```text
//! y_t    = x_t beta_t + eps_t,              eps_t ~ N(0, sigma2_t)
//! beta_t = F_t beta_{t-1} + eta_t,          eta_t ~ N(0, W_t)
//! ```
//!
//! with diagonal, time-varying `F_t` and `W_t`. The squared-error summaries
//! `D_t` and `R_t` consumed by the prior and volatility updates live here too.

use nalgebra::{DMatrix, DVector};

use crate::data::RegressionData;
use crate::error::{Error, Result};

/// Relative jitter added to a predicted covariance that fails Cholesky.
const SMOOTHER_JITTER: f64 = 1e-8;

/// Diagonal transition and state-noise sequences plus measurement variances.
///
/// Row `t` of `f_tilde` / `w_tilde` holds the diagonal of `F_t` / `W_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSequences {
    pub f_tilde: DMatrix<f64>,
    pub w_tilde: DMatrix<f64>,
    pub sigma2: DVector<f64>,
}

impl SystemSequences {
    pub fn new(f_tilde: DMatrix<f64>, w_tilde: DMatrix<f64>, sigma2: DVector<f64>) -> Result<Self> {
        if f_tilde.shape() != w_tilde.shape() {
            return Err(Error::invalid(format!(
                "F has shape {:?} but W has shape {:?}",
                f_tilde.shape(),
                w_tilde.shape()
            )));
        }
        if sigma2.len() != f_tilde.nrows() {
            return Err(Error::invalid(format!(
                "sigma2 has length {} but the system covers {} periods",
                sigma2.len(),
                f_tilde.nrows()
            )));
        }
        if f_tilde
            .iter()
            .any(|f| !(f.is_finite() && *f > 0.0 && *f <= 1.0))
        {
            return Err(Error::invalid("transition entries must lie in (0, 1]"));
        }
        // Zero state noise is admitted: it is the static-coefficient limit.
        if w_tilde.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid(
                "state variances must be finite and nonnegative",
            ));
        }
        if sigma2.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid(
                "measurement variances must be finite and positive",
            ));
        }
        Ok(Self {
            f_tilde,
            w_tilde,
            sigma2,
        })
    }

    /// Random-walk system: `F = I`, `W_t = diag(w)` for the given variances.
    pub fn random_walk(w: DMatrix<f64>, sigma2: DVector<f64>) -> Result<Self> {
        let f = DMatrix::from_element(w.nrows(), w.ncols(), 1.0);
        Self::new(f, w, sigma2)
    }

    pub fn n_periods(&self) -> usize {
        self.f_tilde.nrows()
    }

    pub fn dim(&self) -> usize {
        self.f_tilde.ncols()
    }
}

/// Combines the random-walk precisions `1/w` and the selection-prior
/// precisions `1/v` into the transformed state equation.
///
/// Returns `(f_tilde, w_tilde)` with `w_tilde = 1/(1/w + 1/v)` and
/// `f_tilde = w_tilde / w`.
pub fn combine_priors(
    w_inv: &DMatrix<f64>,
    v_inv: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if w_inv.shape() != v_inv.shape() {
        return Err(Error::invalid(format!(
            "w_inv has shape {:?} but v_inv has shape {:?}",
            w_inv.shape(),
            v_inv.shape()
        )));
    }
    let bad = |x: &f64| !(x.is_finite() && *x > 0.0);
    if w_inv.iter().any(bad) || v_inv.iter().any(bad) {
        return Err(Error::invalid(
            "prior precisions must be finite and strictly positive",
        ));
    }
    let w_tilde = w_inv.zip_map(v_inv, |a, b| 1.0 / (a + b));
    let f_tilde = w_tilde.component_mul(w_inv);
    Ok((f_tilde, w_tilde))
}

/// Predicted, filtered and (once smoothed) smoothed moments of `beta_t`.
///
/// Index `t` in every vector is period `t + 1`; the prior `(m0, p0)` is kept
/// separately. The smoothed vectors are empty until [`rts_smoother`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMoments {
    pub m0: DVector<f64>,
    pub p0: DMatrix<f64>,
    pub m_pred: Vec<DVector<f64>>,
    pub p_pred: Vec<DMatrix<f64>>,
    pub m_filt: Vec<DVector<f64>>,
    pub p_filt: Vec<DMatrix<f64>>,
    pub kalman_gain: Vec<DVector<f64>>,
    pub m_smooth: Vec<DVector<f64>>,
    pub p_smooth: Vec<DMatrix<f64>>,
}

impl StateMoments {
    pub fn n_periods(&self) -> usize {
        self.m_filt.len()
    }

    pub fn is_smoothed(&self) -> bool {
        !self.m_smooth.is_empty() && self.m_smooth.len() == self.m_filt.len()
    }

    /// Smoothed means as a T x p matrix.
    pub fn smoothed_mean_matrix(&self) -> DMatrix<f64> {
        let p = self.m0.len();
        DMatrix::from_fn(self.m_smooth.len(), p, |t, j| self.m_smooth[t][j])
    }
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = avg;
            p[(j, i)] = avg;
        }
    }
}

/// Forward Kalman pass over `t = 1..T`.
pub fn kalman_filter(
    data: &RegressionData,
    sys: &SystemSequences,
    m0: &DVector<f64>,
    p0: &DMatrix<f64>,
) -> Result<StateMoments> {
    let n = data.n_obs();
    let p = data.n_predictors();
    if sys.n_periods() != n || sys.dim() != p {
        return Err(Error::invalid(format!(
            "system is {}x{} but data is {}x{}",
            sys.n_periods(),
            sys.dim(),
            n,
            p
        )));
    }
    if m0.len() != p || p0.shape() != (p, p) {
        return Err(Error::invalid(
            "initial moments do not match the predictor count",
        ));
    }

    let mut out = StateMoments {
        m0: m0.clone(),
        p0: p0.clone(),
        m_pred: Vec::with_capacity(n),
        p_pred: Vec::with_capacity(n),
        m_filt: Vec::with_capacity(n),
        p_filt: Vec::with_capacity(n),
        kalman_gain: Vec::with_capacity(n),
        m_smooth: Vec::new(),
        p_smooth: Vec::new(),
    };

    for t in 0..n {
        let (m_prev, p_prev) = match t {
            0 => (m0, p0),
            _ => (&out.m_filt[t - 1], &out.p_filt[t - 1]),
        };
        let f = sys.f_tilde.row(t).transpose();
        let w = sys.w_tilde.row(t);

        let m_pred = m_prev.component_mul(&f);
        let mut p_pred = DMatrix::from_fn(p, p, |i, j| f[i] * f[j] * p_prev[(i, j)]);
        for j in 0..p {
            p_pred[(j, j)] += w[j];
        }

        let x = data.x.row(t).transpose();
        let px = &p_pred * &x;
        let s = x.dot(&px) + sys.sigma2[t];
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::numerical(format!(
                "innovation variance {s} is not positive at t={}",
                t + 1
            )));
        }
        let gain = &px / s;
        let innovation = data.y[t] - x.dot(&m_pred);
        let m_filt = &m_pred + &gain * innovation;
        // (I - K x) P = P - K (P x')' for symmetric P.
        let mut p_filt = p_pred.clone();
        p_filt.ger(-1.0, &gain, &px, 1.0);
        symmetrize(&mut p_filt);

        out.m_pred.push(m_pred);
        out.p_pred.push(p_pred);
        out.m_filt.push(m_filt);
        out.p_filt.push(p_filt);
        out.kalman_gain.push(gain);
    }
    Ok(out)
}

/// Backward RTS pass. Consumes filtered moments and fills the smoothed part.
///
/// The smoother gain for period `t` uses the transition into `t + 1`, the
/// same matrix that produced `P_{t+1|t}`.
pub fn rts_smoother(mut moments: StateMoments, sys: &SystemSequences) -> Result<StateMoments> {
    let n = moments.n_periods();
    if n == 0 {
        return Err(Error::invalid("no filtered moments to smooth"));
    }
    if sys.n_periods() != n {
        return Err(Error::invalid(
            "system length does not match filtered moments",
        ));
    }
    let mut m_smooth = vec![DVector::zeros(0); n];
    let mut p_smooth = vec![DMatrix::zeros(0, 0); n];
    m_smooth[n - 1] = moments.m_filt[n - 1].clone();
    p_smooth[n - 1] = moments.p_filt[n - 1].clone();

    for t in (0..n - 1).rev() {
        let f_next = sys.f_tilde.row(t + 1);
        let p_filt = &moments.p_filt[t];
        let p_next = &moments.p_pred[t + 1];
        let chol = match p_next.clone().cholesky() {
            Some(c) => c,
            None => {
                let dim = p_next.nrows();
                let jitter = SMOOTHER_JITTER * p_next.trace() / dim as f64;
                let jittered = p_next + DMatrix::identity(dim, dim) * jitter;
                jittered.cholesky().ok_or_else(|| {
                    Error::numerical(format!(
                        "predicted covariance at t={} is not positive definite",
                        t + 2
                    ))
                })?
            }
        };
        // C' = P_{t+1|t}^{-1} F P_{t|t}
        let mut fp = p_filt.clone();
        for (i, mut row) in fp.row_iter_mut().enumerate() {
            row *= f_next[i];
        }
        let gain = chol.solve(&fp).transpose();

        let m = &moments.m_filt[t] + &gain * (&m_smooth[t + 1] - &moments.m_pred[t + 1]);
        let diff = &p_smooth[t + 1] - p_next;
        let mut ps = p_filt + &gain * diff * gain.transpose();
        symmetrize(&mut ps);
        m_smooth[t] = m;
        p_smooth[t] = ps;
    }
    moments.m_smooth = m_smooth;
    moments.p_smooth = p_smooth;
    Ok(moments)
}

/// Diagonals of the state squared-error matrices `D_t` and the
/// measurement squared errors `R_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummaries {
    /// T x p, row `t` is `diag(D_t)`.
    pub d_diag: DMatrix<f64>,
    pub r: DVector<f64>,
}

/// `diag(D_t)` for
/// `D_t = P_{t|T} + m_{t|T} m_{t|T}' + (P_{t-1|T} + m_{t-1|T} m_{t-1|T}')(I - 2F_t)'`,
/// using the prior moments for the `t - 1` terms at the first period.
pub fn state_sq_error(smooth: &StateMoments, sys: &SystemSequences) -> Result<DMatrix<f64>> {
    if !smooth.is_smoothed() {
        return Err(Error::invalid("state_sq_error requires smoothed moments"));
    }
    let n = smooth.n_periods();
    let p = smooth.m0.len();
    if sys.n_periods() != n || sys.dim() != p {
        return Err(Error::invalid("system does not match smoothed moments"));
    }
    let mut d = DMatrix::zeros(n, p);
    for t in 0..n {
        let (m_prev, p_prev) = match t {
            0 => (&smooth.m0, &smooth.p0),
            _ => (&smooth.m_smooth[t - 1], &smooth.p_smooth[t - 1]),
        };
        let m = &smooth.m_smooth[t];
        let pt = &smooth.p_smooth[t];
        for j in 0..p {
            let second_moment = pt[(j, j)] + m[j] * m[j];
            let prev_moment = p_prev[(j, j)] + m_prev[j] * m_prev[j];
            d[(t, j)] = second_moment + prev_moment * (1.0 - 2.0 * sys.f_tilde[(t, j)]);
        }
    }
    Ok(d)
}

/// `R_t = (y_t - x_t m_{t|T})^2 + x_t P_{t|T} x_t'`.
pub fn measurement_sq_error(data: &RegressionData, smooth: &StateMoments) -> Result<DVector<f64>> {
    if !smooth.is_smoothed() || smooth.n_periods() != data.n_obs() {
        return Err(Error::invalid(
            "measurement_sq_error requires smoothed moments for every period",
        ));
    }
    let r = DVector::from_fn(data.n_obs(), |t, _| {
        let x = data.x.row(t).transpose();
        let resid = data.y[t] - x.dot(&smooth.m_smooth[t]);
        let spread = x.dot(&(&smooth.p_smooth[t] * &x));
        // A PSD covariance cannot make the quadratic form negative; rounding can.
        resid * resid + spread.max(0.0)
    });
    Ok(r)
}

/// Runs both summaries.
pub fn error_summaries(
    data: &RegressionData,
    smooth: &StateMoments,
    sys: &SystemSequences,
) -> Result<ErrorSummaries> {
    Ok(ErrorSummaries {
        d_diag: state_sq_error(smooth, sys)?,
        r: measurement_sq_error(data, smooth)?,
    })
}
