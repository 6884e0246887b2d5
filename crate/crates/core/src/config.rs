//! Fitting configuration shared by the contaminated-normal and t mixtures.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which scale and η updates the contaminated-normal ECM uses. On fully
/// observed data they differ only in where the scale update is centered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmRule {
    /// Conditional covariance weighted by w̃ in the scale update, scale
    /// centered on the previous mean, and an η ratio over the imputed
    /// vector with d^o in the denominator.
    #[default]
    Printed,
    /// Conditional covariance weighted by z̃, scale centered on the new
    /// mean, and an η ratio with the missing-block trace term over d.
    Exact,
}

impl std::str::FromStr for CmRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "printed" => Ok(CmRule::Printed),
            "exact" => Ok(CmRule::Exact),
            other => Err(Error::Config(format!("unknown cm_rule {other:?}"))),
        }
    }
}

/// Tuning knobs for `fit_mcnm` and `fit_tmix`. Every field has a default, so
/// a config file only needs the keys it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Number of mixture components.
    pub g: usize,
    /// Relative log-likelihood change that stops the iterations.
    pub tol: f64,
    pub max_iter: usize,
    /// Start 0 is k-means++; the rest are random soft assignments.
    pub n_starts: usize,
    pub seed: u64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub eta_min: f64,
    /// Relative ridge for covariance repair (`ridge * trace/d`).
    pub ridge: f64,
    /// A start aborts when a component's mass drops below this fraction of n.
    pub min_mass_fraction: f64,
    pub kmeans_restarts: usize,
    pub init_alpha: f64,
    pub init_eta: f64,
    pub cm_rule: CmRule,
    /// Fixes the t degrees of freedom instead of estimating them.
    pub nu_fixed: Option<f64>,
    pub nu_min: f64,
    pub nu_max: f64,
    pub init_nu: f64,
    /// Chi-square quantile for the t mixture's distance-based outlier call.
    pub outlier_quantile: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            g: 2,
            tol: 1e-8,
            max_iter: 500,
            n_starts: 10,
            seed: 0,
            alpha_min: 0.5,
            alpha_max: 1.0 - 1e-6,
            eta_min: 1.001,
            ridge: crate::math::DEFAULT_RIDGE,
            min_mass_fraction: 1e-6,
            kmeans_restarts: 10,
            init_alpha: 0.95,
            init_eta: 1.1,
            cm_rule: CmRule::Printed,
            nu_fixed: None,
            nu_min: 2.0001,
            nu_max: 200.0,
            init_nu: 10.0,
            outlier_quantile: 0.975,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.g == 0 {
            return bad("g must be at least 1".into());
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 || self.n_starts == 0 || self.kmeans_restarts == 0 {
            return bad("max_iter, n_starts and kmeans_restarts must be at least 1".into());
        }
        if !(self.alpha_min > 0.0 && self.alpha_min < self.alpha_max && self.alpha_max < 1.0) {
            return bad(format!(
                "need 0 < alpha_min < alpha_max < 1, got [{}, {}]",
                self.alpha_min, self.alpha_max
            ));
        }
        if !(self.eta_min >= 1.0 && self.eta_min.is_finite()) {
            return bad(format!("eta_min must be >= 1, got {}", self.eta_min));
        }
        if !(self.init_eta >= 1.0) || !(self.init_alpha > 0.0 && self.init_alpha < 1.0) {
            return bad("init_alpha must be in (0,1) and init_eta >= 1".into());
        }
        if !(self.ridge >= 0.0) || !(self.min_mass_fraction >= 0.0) {
            return bad("ridge and min_mass_fraction must be nonnegative".into());
        }
        if !(self.nu_min > 0.0 && self.nu_min < self.nu_max) {
            return bad(format!("need 0 < nu_min < nu_max, got [{}, {}]", self.nu_min, self.nu_max));
        }
        if let Some(nu) = self.nu_fixed {
            if !(nu > 0.0) {
                return bad(format!("nu_fixed must be positive, got {nu}"));
            }
        }
        if !(self.outlier_quantile > 0.0 && self.outlier_quantile < 1.0) {
            return bad("outlier_quantile must lie in (0,1)".into());
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}
