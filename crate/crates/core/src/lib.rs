//! Model-based clustering with mixtures of multivariate contaminated normal
//! distributions on data with values missing at random.
//!
//! Fitting runs an ECM algorithm that treats the missing coordinates and the
//! good/bad status of each point as latent. The result carries cluster
//! labels, per-point outlier flags and imputed values. A mixture of
//! multivariate t distributions is available as a baseline, together with a
//! scenario generator, MAR amputation and a benchmark harness.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity,
    clippy::needless_range_loop
)]

pub mod bench;
pub mod cli;
pub mod config;
pub mod data;
mod engine;
pub mod error;
pub mod init;
pub mod math;
pub mod mcnm;
pub mod metrics;
pub mod model;
pub mod result;
pub mod simulate;
pub mod tmix;

pub use config::FitConfig;
pub use data::Dataset;
pub use engine::StartSummary;
pub use error::{Error, Result};
pub use mcnm::{fit_mcnm, fit_mcnm_from};
pub use metrics::{adjusted_rand_index, outlier_rates};
pub use model::{FittedModel, McnComponent, McnmModel, ModelKind, TComponent, TmixModel};
pub use result::{FitDocument, FitResult};
pub use tmix::{fit_tmix, fit_tmix_from};

/// Fits the requested model family.
pub fn fit(ds: &Dataset, kind: ModelKind, cfg: &FitConfig) -> Result<FitResult> {
    match kind {
        ModelKind::Mcnm => fit_mcnm(ds, cfg),
        ModelKind::Tmix => fit_tmix(ds, cfg),
    }
}
