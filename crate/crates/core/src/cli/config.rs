//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{FitOptions, PriorConfig};
use crate::pipeline::forecast::ModelSpec;
use crate::pipeline::transform::DEFAULT_OUTLIER_KAPPA;

/// Prior block: an optional preset with per-field overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p0_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_spike: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl PriorSection {
    pub fn resolve(&self) -> Result<PriorConfig> {
        let name = self.preset.as_deref().unwrap_or("prior3");
        let mut p = PriorConfig::preset(name).ok_or_else(|| {
            Error::Config(format!(
                "prior.preset: unknown preset '{name}' (expected prior1, prior2 or prior3)"
            ))
        })?;
        if let Some(v) = &self.m0 {
            p.m0 = v.clone();
        }
        let fields = [
            (&mut p.p0_scale, self.p0_scale),
            (&mut p.a0, self.a0),
            (&mut p.b0, self.b0),
            (&mut p.c0, self.c0),
            (&mut p.d0, self.d0),
            (&mut p.g0, self.g0),
            (&mut p.h0, self.h0),
            (&mut p.c_spike, self.c_spike),
            (&mut p.delta, self.delta),
        ];
        for (slot, value) in fields {
            if let Some(v) = value {
                *slot = v;
            }
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dvs_enabled: Option<bool>,
}

impl OptionsSection {
    pub fn resolve(&self) -> Result<FitOptions> {
        let d = FitOptions::default();
        let opts = FitOptions {
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            tol: self.tol.unwrap_or(d.tol),
            fixed_sigma2: self.fixed_sigma2.or(d.fixed_sigma2),
            dvs_enabled: self.dvs_enabled.unwrap_or(d.dvs_enabled),
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub n_obs: usize,
    pub n_predictors: usize,
}

/// Input files for `fit`, relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub y: PathBuf,
    pub x: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub n_obs: usize,
    pub n_predictors: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
}

fn default_replications() -> usize {
    100
}

/// Simulated leading-indicator panel used in place of a CSV panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPanel {
    pub n_obs: usize,
    pub n_predictors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panel: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticPanel>,
    /// Read the target column as a price level.
    #[serde(default)]
    pub price_target: bool,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "default_lags")]
    pub lags: usize,
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_models")]
    pub models: Vec<ModelSpec>,
}

fn default_horizons() -> Vec<usize> {
    vec![1, 2, 4, 8]
}

fn default_lags() -> usize {
    2
}

fn default_window() -> f64 {
    0.5
}

fn default_kappa() -> f64 {
    DEFAULT_OUTLIER_KAPPA
}

fn default_models() -> Vec<ModelSpec> {
    vec![ModelSpec::fac5(), ModelSpec::all_predictors()]
}

/// Whole run configuration. Each command reads the sections it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub options: OptionsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<MonteCarloSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast: Option<ForecastSection>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn section<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing [{name}] section")))
    }
}
