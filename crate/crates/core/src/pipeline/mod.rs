//! Data preparation and out-of-sample direct forecasting.

pub mod factors;
pub mod forecast;
pub mod panel;
pub mod transform;

pub use factors::{factors_from_panel, principal_components, standardize, Standardized};
pub use forecast::{
    build_direct_dataset, evaluate_oos, forecast_vbdvs, ols_direct_forecast, run_expanding_window,
    EvalSummary, ForecastRecord, ForecastTask, ModelKind, ModelSpec,
};
pub use transform::{apply_transform, build_target, remove_outliers, TransformCode};
