use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

/// Dependent series `y` (length T) and predictor matrix `X` (T x p).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
}

impl RegressionData {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::invalid(format!(
                "y has {} observations but X has {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::invalid("X must have at least one column"));
        }
        if let Some(t) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("y[{t}] is not finite")));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            let (r, c) = (i % x.nrows(), i / x.nrows());
            return Err(Error::invalid(format!("X[{r},{c}] is not finite")));
        }
        Ok(Self { y, x })
    }

    /// Builds from row-major predictor rows.
    pub fn from_rows(y: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::invalid("ragged predictor rows"));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(DVector::from_vec(y), x)
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, t: usize) -> RowDVector<f64> {
        self.x.row(t).into_owned()
    }

    /// Sample variance of `y` (divisor T - 1).
    pub fn y_variance(&self) -> f64 {
        let n = self.y.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.y.mean();
        self.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    }
}
