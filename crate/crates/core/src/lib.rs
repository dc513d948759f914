pub mod cli;
pub mod data;
pub mod dvs_prior;
pub mod error;
pub mod estimator;
pub mod pipeline;
pub mod simulate;
pub mod statespace;
pub mod volatility;

pub use data::RegressionData;
pub use error::{Error, Result};
pub use estimator::{fit_simple_tvp, fit_vbdvs, FitOptions, FitResult, PriorConfig};
