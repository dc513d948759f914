//! Column standardization and principal-component factors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Output of [`standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub x: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// Sample standard deviation, divisor `T - 1`.
    pub std: DVector<f64>,
}

impl Standardized {
    /// Maps standardized values back to the original scale.
    pub fn restore(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.x.nrows(), self.x.ncols(), |i, j| {
            self.x[(i, j)] * self.std[j] + self.mean[j]
        })
    }
}

pub fn standardize(x: &DMatrix<f64>) -> Result<Standardized> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid("standardization needs at least two rows"));
    }
    let p = x.ncols();
    let mut mean = DVector::zeros(p);
    let mut std = DVector::zeros(p);
    for j in 0..p {
        let col = x.column(j);
        let m = col.mean();
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        if !(var > 0.0) {
            return Err(Error::invalid(format!("column {j} has zero variance")));
        }
        mean[j] = m;
        std[j] = var.sqrt();
    }
    let z = DMatrix::from_fn(n, p, |i, j| (x[(i, j)] - mean[j]) / std[j]);
    Ok(Standardized { x: z, mean, std })
}

/// First `k` principal-component factors of `x` (assumed column-centred).
///
/// Factors are `U_k S_k / sqrt(T - 1)`, so `F'F` is diagonal with the leading
/// eigenvalues of the sample covariance. Each loading vector is signed so
/// its largest-magnitude entry is positive.
pub fn principal_components(x: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    if k == 0 || k > n.min(p) {
        return Err(Error::invalid(format!(
            "k = {k} principal components requested from a {n} x {p} matrix"
        )));
    }
    if n < 2 {
        return Err(Error::invalid(
            "principal components need at least two rows",
        ));
    }
    let svd = x.clone().svd(true, true);
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::numerical("SVD did not return U"))?;
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::numerical("SVD did not return V'"))?;

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));

    let scale = ((n - 1) as f64).sqrt();
    let mut factors = DMatrix::zeros(n, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let loading = v_t.row(idx);
        let peak = loading
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        let sign = if peak < 0.0 { -1.0 } else { 1.0 };
        let s = svd.singular_values[idx];
        for i in 0..n {
            factors[(i, c)] = sign * u[(i, idx)] * s / scale;
        }
    }
    Ok(factors)
}

/// Standardizes `x` and returns its first `k` factors.
pub fn factors_from_panel(x: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    principal_components(&standardize(x)?.x, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn two_point_column() {
        let s = standardize(&DMatrix::from_column_slice(2, 1, &[0.0, 2.0])).unwrap();
        assert_abs_diff_eq!(s.x[(0, 0)], -0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.x[(1, 0)], 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.std[0], 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn standardize_round_trip_and_idempotence() {
        let x = random(30, 4, 1) * 3.0 + DMatrix::from_element(30, 4, 5.0);
        let s = standardize(&x).unwrap();
        assert!((s.restore() - &x).amax() < 1e-12);
        let again = standardize(&s.x).unwrap();
        assert!((again.x - &s.x).amax() < 1e-12);
    }

    #[test]
    fn zero_variance_column_named() {
        let mut x = random(10, 3, 2);
        x.column_mut(1).fill(7.0);
        let err = standardize(&x).unwrap_err();
        assert!(err.to_string().contains("column 1"), "{err}");
    }

    #[test]
    fn rank_one_explains_everything() {
        let a = DVector::from_fn(12, |i, _| i as f64 - 5.5);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = &a * b.transpose();
        let f = principal_components(&x, 2).unwrap();
        let total: f64 = x.iter().map(|v| v * v).sum::<f64>() / 11.0;
        let first = f.column(0).norm_squared();
        assert_abs_diff_eq!(first / total, 1.0, epsilon = 1e-12);
        assert!(f.column(1).norm() < 1e-6);
    }

    #[test]
    fn factors_orthogonal_with_decreasing_variance() {
        let x = standardize(&random(40, 8, 3)).unwrap().x;
        let f = principal_components(&x, 5).unwrap();
        let gram = f.transpose() * &f;
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert!(gram[(i, j)].abs() < 1e-10);
                }
            }
            if i > 0 {
                assert!(gram[(i, i)] <= gram[(i - 1, i - 1)] + 1e-12);
            }
        }
    }

    #[test]
    fn k_out_of_range() {
        let x = random(5, 3, 4);
        assert!(principal_components(&x, 0).is_err());
        assert!(principal_components(&x, 4).is_err());
        assert!(principal_components(&x, 3).is_ok());
    }

    #[test]
    fn sign_convention() {
        let x = standardize(&random(25, 4, 5)).unwrap().x;
        let f = principal_components(&x, 2).unwrap();
        let loadings = x.transpose() * &f;
        for c in 0..2 {
            let col = loadings.column(c);
            let peak = col
                .iter()
                .copied()
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap();
            assert!(peak > 0.0);
        }
    }
}
