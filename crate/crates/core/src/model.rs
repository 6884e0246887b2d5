//! Parameter containers for the two mixture families.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::SpdFactor;

/// One contaminated-normal component: center, scale, proportion of good
/// points and degree of contamination.
#[derive(Debug, Clone, PartialEq)]
pub struct McnComponent {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub alpha: f64,
    pub eta: f64,
}

/// Mixing proportions plus G contaminated-normal components.
#[derive(Debug, Clone, PartialEq)]
pub struct McnmModel {
    pub pi: Vec<f64>,
    pub components: Vec<McnComponent>,
}

fn check_pi(pi: &[f64], g: usize) -> Result<()> {
    if pi.len() != g || g == 0 {
        return Err(Error::Contract(format!("{} mixing proportions for {g} components", pi.len())));
    }
    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Domain("mixing proportions must be positive".into()));
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("mixing proportions sum to {total}")));
    }
    Ok(())
}

fn check_location(mu: &DVector<f64>, sigma: &DMatrix<f64>, d: usize, g: usize) -> Result<()> {
    if mu.len() != d || sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::Contract(format!("component {g} has inconsistent dimensions")));
    }
    SpdFactor::new(sigma, 0.0, &format!("component {g}"))?;
    Ok(())
}

impl McnmModel {
    pub fn g(&self) -> usize {
        self.components.len()
    }

    pub fn d(&self) -> usize {
        self.components.first().map_or(0, |c| c.mu.len())
    }

    pub fn validate(&self) -> Result<()> {
        check_pi(&self.pi, self.g())?;
        let d = self.d();
        for (g, c) in self.components.iter().enumerate() {
            check_location(&c.mu, &c.sigma, d, g)?;
            if !(c.alpha > 0.0 && c.alpha < 1.0) {
                return Err(Error::Domain(format!("component {g}: alpha {} outside (0,1)", c.alpha)));
            }
            if !(c.eta >= 1.0) || !c.eta.is_finite() {
                return Err(Error::Domain(format!("component {g}: eta {} below 1", c.eta)));
            }
        }
        Ok(())
    }

    /// Free parameters: (G-1) proportions, and per component d means,
    /// d(d+1)/2 scale entries, α and η.
    pub fn n_parameters(&self) -> usize {
        let (g, d) = (self.g(), self.d());
        (g - 1) + g * (d + d * (d + 1) / 2 + 2)
    }

    /// Same model with components reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            pi: order.iter().map(|&g| self.pi[g]).collect(),
            components: order.iter().map(|&g| self.components[g].clone()).collect(),
        }
    }
}

/// One multivariate t component.
#[derive(Debug, Clone, PartialEq)]
pub struct TComponent {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TmixModel {
    pub pi: Vec<f64>,
    pub components: Vec<TComponent>,
}

impl TmixModel {
    pub fn g(&self) -> usize {
        self.components.len()
    }

    pub fn d(&self) -> usize {
        self.components.first().map_or(0, |c| c.mu.len())
    }

    pub fn validate(&self) -> Result<()> {
        check_pi(&self.pi, self.g())?;
        let d = self.d();
        for (g, c) in self.components.iter().enumerate() {
            check_location(&c.mu, &c.sigma, d, g)?;
            if !(c.nu > 0.0) {
                return Err(Error::Domain(format!("component {g}: nu {} not positive", c.nu)));
            }
        }
        Ok(())
    }

    /// `nu_estimated` adds one degrees-of-freedom parameter per component.
    pub fn n_parameters(&self, nu_estimated: bool) -> usize {
        let (g, d) = (self.g(), self.d());
        (g - 1) + g * (d + d * (d + 1) / 2 + usize::from(nu_estimated))
    }
}

/// A fitted model of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Mcnm(McnmModel),
    Tmix(TmixModel),
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedModel::Mcnm(_) => ModelKind::Mcnm,
            FittedModel::Tmix(_) => ModelKind::Tmix,
        }
    }

    pub fn g(&self) -> usize {
        match self {
            FittedModel::Mcnm(m) => m.g(),
            FittedModel::Tmix(m) => m.g(),
        }
    }

    pub fn d(&self) -> usize {
        match self {
            FittedModel::Mcnm(m) => m.d(),
            FittedModel::Tmix(m) => m.d(),
        }
    }

    pub fn pi(&self) -> &[f64] {
        match self {
            FittedModel::Mcnm(m) => &m.pi,
            FittedModel::Tmix(m) => &m.pi,
        }
    }

    pub fn location(&self, g: usize) -> (&DVector<f64>, &DMatrix<f64>) {
        match self {
            FittedModel::Mcnm(m) => (&m.components[g].mu, &m.components[g].sigma),
            FittedModel::Tmix(m) => (&m.components[g].mu, &m.components[g].sigma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mcnm,
    Tmix,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mcnm => "mcnm",
            ModelKind::Tmix => "tmix",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcnm" => Ok(ModelKind::Mcnm),
            "tmix" => Ok(ModelKind::Tmix),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}
