//! Fit results and their on-disk document form.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::FitConfig;
use crate::data::Dataset;
use crate::engine::StartSummary;
use crate::error::{Error, Result};
use crate::mcnm::{self, EStepState, Layout};
use crate::model::{FittedModel, McnComponent, McnmModel, ModelKind, TComponent, TmixModel};
use crate::tmix::{self, TmixState};

pub const SCHEMA_NAME: &str = "mcnm-fit";
pub const SCHEMA_VERSION: u32 = 1;

/// Posterior quantities of the final E-step.
#[derive(Debug, Clone, PartialEq)]
pub enum Posterior {
    Mcnm(EStepState),
    Tmix(TmixState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: FittedModel,
    pub posterior: Posterior,
    /// Observed-data log-likelihood before the first update and after each one.
    pub loglik_trace: Vec<f64>,
    pub labels: Vec<usize>,
    pub outlier_flag: Vec<bool>,
    /// Input data with each missing cell filled from the assigned component.
    pub imputed: Dataset,
    pub n_iter: usize,
    pub converged: bool,
    pub loglik: f64,
    pub bic: f64,
    /// Conditions met during fitting, e.g. `no_contamination:1`.
    pub flags: Vec<String>,
    pub starts: Vec<StartSummary>,
}

impl FitResult {
    pub fn z_tilde(&self) -> &DMatrix<f64> {
        match &self.posterior {
            Posterior::Mcnm(s) => &s.z_tilde,
            Posterior::Tmix(s) => &s.z_tilde,
        }
    }

    /// Good-point probabilities; only the contaminated-normal model has them.
    pub fn v_tilde(&self) -> Option<&DMatrix<f64>> {
        match &self.posterior {
            Posterior::Mcnm(s) => Some(&s.v_tilde),
            Posterior::Tmix(_) => None,
        }
    }

    pub fn x_tilde(&self, i: usize, g: usize) -> &DVector<f64> {
        match &self.posterior {
            Posterior::Mcnm(s) => s.x_tilde(i, g),
            Posterior::Tmix(s) => s.x_tilde(i, g),
        }
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.model.g()];
        self.labels.iter().for_each(|&l| sizes[l] += 1);
        sizes
    }

    pub fn to_document(&self, config: &FitConfig) -> FitDocument {
        FitDocument {
            schema: SCHEMA_NAME.into(),
            schema_version: SCHEMA_VERSION,
            model_type: self.model.kind(),
            n: self.labels.len(),
            d: self.model.d(),
            g: self.model.g(),
            columns: self.imputed.columns().to_vec(),
            model: ModelDoc::from(&self.model),
            loglik: self.loglik,
            bic: self.bic,
            n_iter: self.n_iter,
            converged: self.converged,
            loglik_trace: self.loglik_trace.clone(),
            labels: self.labels.clone(),
            outlier_flag: self.outlier_flag.clone(),
            flags: self.flags.clone(),
            starts: self.starts.clone(),
            config: config.clone(),
        }
    }
}

/// Argmax per row, ties to the lowest column.
pub fn argmax_rows(m: &DMatrix<f64>) -> Vec<usize> {
    (0..m.nrows())
        .map(|i| {
            let mut best = 0;
            for g in 1..m.ncols() {
                if m[(i, g)] > m[(i, best)] {
                    best = g;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDoc {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub pi: Vec<f64>,
    pub components: Vec<ComponentDoc>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn rows_matrix(rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Document(format!("sigma must be {d}x{d}")));
    }
    Ok(DMatrix::from_fn(d, d, |r, c| rows[r][c]))
}

impl From<&FittedModel> for ModelDoc {
    fn from(model: &FittedModel) -> Self {
        let components = match model {
            FittedModel::Mcnm(m) => m
                .components
                .iter()
                .map(|c| ComponentDoc {
                    mu: c.mu.iter().copied().collect(),
                    sigma: matrix_rows(&c.sigma),
                    alpha: Some(c.alpha),
                    eta: Some(c.eta),
                    nu: None,
                })
                .collect(),
            FittedModel::Tmix(m) => m
                .components
                .iter()
                .map(|c| ComponentDoc {
                    mu: c.mu.iter().copied().collect(),
                    sigma: matrix_rows(&c.sigma),
                    alpha: None,
                    eta: None,
                    nu: Some(c.nu),
                })
                .collect(),
        };
        ModelDoc {
            pi: model.pi().to_vec(),
            components,
        }
    }
}

impl ModelDoc {
    pub fn to_model(&self, kind: ModelKind) -> Result<FittedModel> {
        let d = self.components.first().map_or(0, |c| c.mu.len());
        let missing = |what: &str, g: usize| Error::Document(format!("component {g} lacks {what}"));
        let model = match kind {
            ModelKind::Mcnm => {
                let components = self
                    .components
                    .iter()
                    .enumerate()
                    .map(|(g, c)| {
                        Ok(McnComponent {
                            mu: DVector::from_vec(c.mu.clone()),
                            sigma: rows_matrix(&c.sigma, d)?,
                            alpha: c.alpha.ok_or_else(|| missing("alpha", g))?,
                            eta: c.eta.ok_or_else(|| missing("eta", g))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let m = McnmModel {
                    pi: self.pi.clone(),
                    components,
                };
                m.validate()?;
                FittedModel::Mcnm(m)
            }
            ModelKind::Tmix => {
                let components = self
                    .components
                    .iter()
                    .enumerate()
                    .map(|(g, c)| {
                        Ok(TComponent {
                            mu: DVector::from_vec(c.mu.clone()),
                            sigma: rows_matrix(&c.sigma, d)?,
                            nu: c.nu.ok_or_else(|| missing("nu", g))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let m = TmixModel {
                    pi: self.pi.clone(),
                    components,
                };
                m.validate()?;
                FittedModel::Tmix(m)
            }
        };
        Ok(model)
    }
}

/// Versioned, human-readable record of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub schema: String,
    pub schema_version: u32,
    pub model_type: ModelKind,
    pub n: usize,
    pub d: usize,
    pub g: usize,
    pub columns: Vec<String>,
    pub model: ModelDoc,
    pub loglik: f64,
    pub bic: f64,
    pub n_iter: usize,
    pub converged: bool,
    pub loglik_trace: Vec<f64>,
    pub labels: Vec<usize>,
    pub outlier_flag: Vec<bool>,
    pub flags: Vec<String>,
    pub starts: Vec<StartSummary>,
    pub config: FitConfig,
}

impl FitDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("document serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
        if doc.schema != SCHEMA_NAME {
            return Err(Error::Document(format!("unexpected schema {:?}", doc.schema)));
        }
        if doc.schema_version > SCHEMA_VERSION {
            return Err(Error::Document(format!(
                "schema version {} is newer than supported {SCHEMA_VERSION}",
                doc.schema_version
            )));
        }
        Ok(doc)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn fitted_model(&self) -> Result<FittedModel> {
        self.model.to_model(self.model_type)
    }
}

/// Fills the missing cells of `ds` with the conditional means of the
/// component each row is assigned to under `model`.
pub fn impute_dataset(model: &FittedModel, ds: &Dataset, ridge: f64) -> Result<Dataset> {
    if model.d() != ds.d() {
        return Err(Error::Validation(format!(
            "data has {} columns but the model has {}",
            ds.d(),
            model.d()
        )));
    }
    if ds.is_complete() {
        return Ok(ds.clone());
    }
    let layout = Layout::new(ds);
    match model {
        FittedModel::Mcnm(m) => {
            let state = mcnm::e_step_with(&layout, m, ridge)?;
            let labels = argmax_rows(&state.z_tilde);
            mcnm::impute_with(ds, &layout, &labels, &state.x_tilde, m.g())
        }
        FittedModel::Tmix(m) => {
            let state = tmix::e_step_with(&layout, m, ridge)?;
            let labels = argmax_rows(&state.z_tilde);
            mcnm::impute_with(ds, &layout, &labels, &state.x_tilde, m.g())
        }
    }
}
