//! Iteration driver shared by both fitters: runs E/M cycles from a start,
//! monitors the observed log-likelihood, and picks the best of several
//! starts.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::FitConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::init;

pub(crate) trait Engine: Sync {
    type Model: Clone + Send;
    type State: Send;

    fn initial_model(&self, z0: &DMatrix<f64>, imputed: &[f64]) -> Result<Self::Model>;
    fn expect(&self, model: &Self::Model) -> Result<Self::State>;
    fn loglik(&self, state: &Self::State) -> f64;
    fn maximize(
        &self,
        state: &Self::State,
        model: &Self::Model,
        flags: &mut BTreeSet<String>,
    ) -> Result<Self::Model>;
}

/// Outcome of one start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub start: usize,
    pub loglik: Option<f64>,
    pub n_iter: usize,
    pub converged: bool,
    /// Largest single-iteration drop of the log-likelihood (0 when ascending).
    pub max_decrease: f64,
    pub error: Option<String>,
}

pub(crate) struct Run<M, S> {
    pub model: M,
    pub state: S,
    pub trace: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
    pub flags: BTreeSet<String>,
}

pub(crate) fn relative_change(prev: f64, next: f64) -> f64 {
    (next - prev).abs() / (1.0 + next.abs())
}

pub(crate) fn max_decrease(trace: &[f64]) -> f64 {
    trace
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(0.0, f64::max)
}

/// Iterates from `model` until the relative log-likelihood change drops
/// below `cfg.tol` or `cfg.max_iter` updates have been made.
pub(crate) fn run_from<E: Engine>(engine: &E, model: E::Model, cfg: &FitConfig) -> Result<Run<E::Model, E::State>> {
    let mut model = model;
    let mut state = engine.expect(&model)?;
    let mut trace = vec![engine.loglik(&state)];
    let mut flags = BTreeSet::new();
    let mut converged = false;
    let mut n_iter = 0;
    for it in 1..=cfg.max_iter {
        model = engine.maximize(&state, &model, &mut flags)?;
        state = engine.expect(&model)?;
        let ll = engine.loglik(&state);
        let prev = *trace.last().unwrap();
        trace.push(ll);
        n_iter = it;
        if relative_change(prev, ll) < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(Run {
        model,
        state,
        trace,
        n_iter,
        converged,
        flags,
    })
}

/// Runs `cfg.n_starts` starts and keeps the one with the highest final
/// log-likelihood (ties go to the lower start index).
pub(crate) fn run_starts<E: Engine>(
    engine: &E,
    ds: &Dataset,
    cfg: &FitConfig,
) -> Result<(Run<E::Model, E::State>, Vec<StartSummary>)> {
    let imputed = init::mean_impute(ds);
    let outcomes: Vec<Result<Run<E::Model, E::State>>> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|start| {
            let z0 = init::initial_assignment(ds, &imputed, cfg.g, start, cfg.seed, cfg.kmeans_restarts)?;
            let model = engine.initial_model(&z0, &imputed)?;
            run_from(engine, model, cfg)
        })
        .collect();

    let mut summaries = Vec::with_capacity(outcomes.len());
    let mut best: Option<Run<E::Model, E::State>> = None;
    for (start, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(run) => {
                let ll = *run.trace.last().unwrap();
                summaries.push(StartSummary {
                    start,
                    loglik: Some(ll),
                    n_iter: run.n_iter,
                    converged: run.converged,
                    max_decrease: max_decrease(&run.trace),
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some(b) => ll > *b.trace.last().unwrap(),
                };
                if better && ll.is_finite() {
                    best = Some(run);
                }
            }
            Err(e) => summaries.push(StartSummary {
                start,
                loglik: None,
                n_iter: 0,
                converged: false,
                max_decrease: 0.0,
                error: Some(e.to_string()),
            }),
        }
    }
    match best {
        Some(run) => Ok((run, summaries)),
        None => Err(Error::FitFailure {
            diagnostics: summaries
                .iter()
                .map(|s| format!("start {}: {}", s.start, s.error.as_deref().unwrap_or("non-finite log-likelihood")))
                .collect(),
        }),
    }
}

pub(crate) fn check_fit_input(ds: &Dataset, cfg: &FitConfig) -> Result<()> {
    cfg.validate()?;
    let (n, d, g) = (ds.n(), ds.d(), cfg.g);
    if n <= g * d {
        return Err(Error::Contract(format!(
            "need more than G*d = {} rows, got {n}",
            g * d
        )));
    }
    if n < 5 * g * d {
        log::warn!("only {n} rows for G={g}, d={d}; estimates may be unstable");
    }
    Ok(())
}
