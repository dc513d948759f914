mod common;

use common::normals;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use vbdvs::pipeline::forecast::{
    build_direct_dataset, direct_target, evaluate_oos, forecast_vbdvs, run_expanding_window,
    ForecastTask, ModelSpec,
};
use vbdvs::pipeline::{
    apply_transform, principal_components, remove_outliers, standardize, TransformCode,
};
use vbdvs::simulate::{default_config, simulate_dgp};
use vbdvs::{fit_simple_tvp, FitOptions, PriorConfig, RegressionData};

fn positive_series() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1f64..100.0, 3..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn second_difference_is_difference_twice(s in positive_series()) {
        let direct = apply_transform(&s, TransformCode::Diff2).unwrap();
        let once = apply_transform(&s, TransformCode::Diff).unwrap();
        let twice = apply_transform(&once, TransformCode::Diff).unwrap();
        prop_assert_eq!(direct.len(), twice.len());
        for (a, b) in direct.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_second_difference_composes(s in positive_series()) {
        let direct = apply_transform(&s, TransformCode::LogDiff2).unwrap();
        let growth = apply_transform(&s, TransformCode::LogDiff).unwrap();
        let composed = apply_transform(&growth, TransformCode::Diff).unwrap();
        prop_assert_eq!(direct.len(), composed.len());
        for (a, b) in direct.iter().zip(&composed) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn direct_rows_realign_to_raw_indices(n in 8usize..40, h in 1usize..5, lags in 0usize..4, avg in any::<bool>()) {
        prop_assume!(n > h + lags + 1);
        let y: Vec<f64> = (0..n).map(|t| (t * t) as f64 * 0.5 + 1.0).collect();
        let x = DMatrix::from_fn(n, 2, |t, j| 1000.0 * (j + 1) as f64 + t as f64);
        let task = ForecastTask { horizon: h, lags, window: 0.5, target_transform: avg };
        let d = build_direct_dataset(&y, &x, &task).unwrap();
        prop_assert_eq!(d.data.n_obs(), n - h - lags.saturating_sub(1));
        for (row, &t) in d.origins.iter().enumerate() {
            prop_assert_eq!(d.data.y[row], direct_target(&y, t, &task).unwrap());
            prop_assert_eq!(d.data.x[(row, 0)], 1.0);
            for l in 0..lags {
                prop_assert_eq!(d.data.x[(row, 1 + l)], y[t - l]);
            }
            prop_assert_eq!(d.data.x[(row, 1 + lags)], 1000.0 + t as f64);
        }
    }
}

#[test]
fn injected_outlier_is_the_only_change() {
    let mut s = normals(11, 100);
    s[50] = 40.0;
    let out = remove_outliers(&s, 4.5).unwrap();
    let mut prev: Vec<f64> = s[45..50].to_vec();
    prev.sort_by(f64::total_cmp);
    for t in 0..100 {
        if t == 50 {
            assert_eq!(out[t], prev[2]);
        } else {
            assert_eq!(out[t], s[t], "index {t} changed");
        }
    }
}

/// Principal angles between the factor space and the top eigenvectors of
/// the sample covariance, mapped through the data.
#[test]
fn factors_span_the_leading_eigenspace() {
    let raw = DMatrix::from_column_slice(20, 6, &normals(12, 120));
    let x = standardize(&raw).unwrap().x;
    let k = 3;
    let f = principal_components(&x, k).unwrap();

    let cov = x.transpose() * &x / 19.0;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let v = DMatrix::from_fn(6, k, |i, c| eig.eigenvectors[(i, order[c])]);
    let scores = &x * &v;

    let qf = f.clone().qr().q();
    let qs = scores.qr().q();
    // The largest singular value of (I - Qf Qf') Qs is the sine of the
    // largest principal angle; acos near 1 is too coarse for 1e-8.
    let residual = &qs - &qf * (qf.transpose() * &qs);
    let sine = residual.singular_values().max();
    assert!(
        sine.asin() < 1e-8,
        "largest principal angle {:e}",
        sine.asin()
    );
    let gram = f.transpose() * &f;
    for c in 0..k {
        let lambda = eig.eigenvalues[order[c]];
        assert!((gram[(c, c)] - lambda).abs() < 1e-10);
    }
}

#[test]
fn benchmark_against_itself() {
    let draw = simulate_dgp(&default_config(60, 5, 9).unwrap()).unwrap();
    let (y, x) = draw.leading_indicator_panel();
    let y: Vec<f64> = y.iter().copied().collect();
    let task = ForecastTask::new(1);
    let ar = run_expanding_window(
        &y,
        &x,
        &task,
        &ModelSpec::ar(),
        &PriorConfig::prior3(),
        &FitOptions::default(),
    )
    .unwrap();
    assert!(ar.failures.is_empty());
    assert_eq!(ar.records.len(), 30);
    let e = evaluate_oos(&ar.records, &ar.records).unwrap();
    assert_eq!(e.rel_msfe, 1.0);
    assert_eq!(e.rel_alpl, 0.0);
    let again = run_expanding_window(
        &y,
        &x,
        &task,
        &ModelSpec::ar(),
        &PriorConfig::prior3(),
        &FitOptions::default(),
    )
    .unwrap();
    assert_eq!(ar.records, again.records);
}

#[test]
fn vbdvs_forecast_substitution() {
    // p = 1 fit whose terminal moments are set by hand.
    let data =
        RegressionData::from_rows(vec![1.0, 2.0, 3.0], &[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
    let opts = FitOptions {
        max_iter: 1,
        fixed_sigma2: Some(1.0),
        ..FitOptions::default()
    };
    let mut fit = fit_simple_tvp(&data, &PriorConfig::prior3(), &opts).unwrap();
    *fit.states.m_smooth.last_mut().unwrap() = nalgebra::DVector::from_element(1, 2.0);
    *fit.states.p_smooth.last_mut().unwrap() = DMatrix::from_element(1, 1, 0.25);
    let pred = forecast_vbdvs(&fit, &[3.0]).unwrap();
    assert_eq!(pred.point, 6.0);
    assert_eq!(pred.variance, 3.25);
    let zero = forecast_vbdvs(&fit, &[0.0]).unwrap();
    assert_eq!((zero.point, zero.variance), (0.0, 1.0));
}
