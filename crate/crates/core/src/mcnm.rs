//! ECM fitting of mixtures of multivariate contaminated normal distributions
//! to incomplete data.
//!
//! One iteration is an E-step followed by two conditional maximizations:
//! the first updates (π, α, μ, Σ) with η held fixed, the second updates η
//! from the new (μ, Σ). The observed-data log-likelihood is computed from
//! the marginal of each row's observed block, which is again contaminated
//! normal with the same α and η.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::config::{CmRule, FitConfig};
use crate::data::{observation_views, Dataset, ObservationView, PatternTable};
use crate::engine::{self, Engine};
use crate::error::{Error, Result};
use crate::init;
use crate::math::{gaussian_log_density, log_sum_exp, PartitionedNormal, SpdFactor, DEFAULT_RIDGE};
use crate::model::{FittedModel, McnComponent, McnmModel};
use crate::result::{FitResult, Posterior};

/// Expectations produced by one E-step. Per-(row, component) vectors are
/// stored row-major at `i * G + g` and are empty for fully observed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EStepState {
    /// Posterior component memberships.
    pub z_tilde: DMatrix<f64>,
    /// Probability of being a good point given membership.
    pub v_tilde: DMatrix<f64>,
    /// Conditional mean of the missing block under the good component.
    pub x_tilde: Vec<DVector<f64>>,
    /// Conditional second moment of the missing block.
    pub xx_tilde: Vec<DMatrix<f64>>,
    /// `z̃ (ṽ + (1 - ṽ)/η)`.
    pub w_tilde: DMatrix<f64>,
    /// Observed-data log-likelihood at the parameters used.
    pub loglik: f64,
}

impl EStepState {
    pub fn g(&self) -> usize {
        self.z_tilde.ncols()
    }

    pub fn x_tilde(&self, i: usize, g: usize) -> &DVector<f64> {
        &self.x_tilde[i * self.g() + g]
    }

    pub fn xx_tilde(&self, i: usize, g: usize) -> &DMatrix<f64> {
        &self.xx_tilde[i * self.g() + g]
    }
}

/// Output of the first CM-step.
#[derive(Debug, Clone, PartialEq)]
pub struct Cm1Update {
    pub pi: Vec<f64>,
    pub alpha: Vec<f64>,
    pub mu: Vec<DVector<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
    /// True where the scale update needed a diagonal ridge to factorize.
    pub repaired: Vec<bool>,
}

/// Output of the second CM-step.
#[derive(Debug, Clone, PartialEq)]
pub struct Cm2Update {
    pub eta: Vec<f64>,
    /// True where no row carried bad-point mass, so η was left unchanged.
    pub no_contamination: Vec<bool>,
}

/// Row views and pattern groups for one dataset, built once per fit.
pub(crate) struct Layout {
    pub views: Vec<ObservationView>,
    pub patterns: PatternTable,
    pub observed: Vec<DVector<f64>>,
}

impl Layout {
    pub fn new(ds: &Dataset) -> Self {
        Self {
            views: observation_views(ds),
            patterns: PatternTable::new(ds),
            observed: (0..ds.n()).map(|i| ds.observed_values(i)).collect(),
        }
    }

    /// Full-length row: observed values in place, `fill` on missing coordinates.
    pub fn stacked(&self, ds: &Dataset, i: usize, fill: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::from_column_slice(ds.row(i));
        for (k, &j) in self.views[i].missing_idx.iter().enumerate() {
            x[j] = fill[k];
        }
        x
    }
}

fn pattern_context(g: usize, observed_idx: &[usize]) -> String {
    format!("component {g}, observed coordinates {observed_idx:?}")
}

/// Per-(row, component) log terms `ln π_g + ln f_MCN(x^o)` and good-point
/// probabilities; optionally also the conditional moments.
struct ComponentTerms {
    log_weighted: DMatrix<f64>,
    v: DMatrix<f64>,
    x_tilde: Vec<DVector<f64>>,
    xx_tilde: Vec<DMatrix<f64>>,
}

fn component_terms(
    layout: &Layout,
    model: &McnmModel,
    ridge: f64,
    with_moments: bool,
) -> Result<ComponentTerms> {
    let n = layout.views.len();
    let gg = model.g();
    let mut log_weighted = DMatrix::zeros(n, gg);
    let mut v = DMatrix::zeros(n, gg);
    let (mut x_tilde, mut xx_tilde) = if with_moments {
        (
            vec![DVector::zeros(0); n * gg],
            vec![DMatrix::zeros(0, 0); n * gg],
        )
    } else {
        (Vec::new(), Vec::new())
    };
    for (g, comp) in model.components.iter().enumerate() {
        let ln_pi = model.pi[g].ln();
        let ln_alpha = comp.alpha.ln();
        let ln_one_minus = (1.0 - comp.alpha).ln();
        let ln_eta = comp.eta.ln();
        for pattern in &layout.patterns.patterns {
            let part = PartitionedNormal::new(
                &comp.mu,
                &comp.sigma,
                &pattern.observed_idx,
                &pattern.missing_idx,
                ridge,
                &pattern_context(g, &pattern.observed_idx),
            )?;
            let d_obs = pattern.observed_idx.len();
            let log_det = part.factor_oo.log_det();
            for &i in &pattern.rows {
                let diff = &layout.observed[i] - &part.mu_obs;
                let delta = part.factor_oo.mahalanobis(&diff);
                let good = gaussian_log_density(delta, log_det, d_obs);
                let (log_mcn, v_ig) = if comp.eta == 1.0 {
                    (good, comp.alpha)
                } else {
                    let bad = gaussian_log_density(delta / comp.eta, log_det + d_obs as f64 * ln_eta, d_obs);
                    let log_mcn = log_sum_exp(&[ln_alpha + good, ln_one_minus + bad]);
                    (log_mcn, (ln_alpha + good - log_mcn).exp().min(1.0))
                };
                log_weighted[(i, g)] = ln_pi + log_mcn;
                v[(i, g)] = v_ig;
                if with_moments && !pattern.missing_idx.is_empty() {
                    let xt = &part.mu_mis + &part.regression * &diff;
                    let xx = &xt * xt.transpose() + &part.cond_cov;
                    x_tilde[i * gg + g] = xt;
                    xx_tilde[i * gg + g] = xx;
                }
            }
        }
    }
    Ok(ComponentTerms {
        log_weighted,
        v,
        x_tilde,
        xx_tilde,
    })
}

fn row_log_likelihoods(log_weighted: &DMatrix<f64>) -> Result<Vec<f64>> {
    (0..log_weighted.nrows())
        .map(|i| {
            let terms: Vec<f64> = log_weighted.row(i).iter().copied().collect();
            let l = log_sum_exp(&terms);
            if l.is_finite() {
                Ok(l)
            } else {
                Err(Error::DegenerateRow { row: i })
            }
        })
        .collect()
}

pub(crate) fn loglik_with(layout: &Layout, model: &McnmModel, ridge: f64) -> Result<f64> {
    let terms = component_terms(layout, model, ridge, false)?;
    Ok(row_log_likelihoods(&terms.log_weighted)?.iter().sum())
}

/// `Σᵢ ln Σ_g π_g f_MCN(x_i^o; μ_g^o, Σ_g^oo, α_g, η_g)`.
pub fn observed_mcn_log_likelihood(ds: &Dataset, model: &McnmModel) -> Result<f64> {
    check_model(ds, model)?;
    loglik_with(&Layout::new(ds), model, DEFAULT_RIDGE)
}

fn check_model(ds: &Dataset, model: &McnmModel) -> Result<()> {
    model.validate()?;
    if model.d() != ds.d() {
        return Err(Error::Contract(format!(
            "model dimension {} differs from data dimension {}",
            model.d(),
            ds.d()
        )));
    }
    Ok(())
}

pub(crate) fn e_step_with(layout: &Layout, model: &McnmModel, ridge: f64) -> Result<EStepState> {
    let terms = component_terms(layout, model, ridge, true)?;
    let row_ll = row_log_likelihoods(&terms.log_weighted)?;
    let (n, gg) = terms.log_weighted.shape();
    let mut z = DMatrix::zeros(n, gg);
    let mut w = DMatrix::zeros(n, gg);
    for i in 0..n {
        for g in 0..gg {
            let zig = (terms.log_weighted[(i, g)] - row_ll[i]).exp();
            z[(i, g)] = zig;
            let v = terms.v[(i, g)];
            w[(i, g)] = zig * (v + (1.0 - v) / model.components[g].eta);
        }
    }
    Ok(EStepState {
        z_tilde: z,
        v_tilde: terms.v,
        x_tilde: terms.x_tilde,
        xx_tilde: terms.xx_tilde,
        w_tilde: w,
        loglik: row_ll.iter().sum(),
    })
}

/// Computes z̃, ṽ, x̃, the conditional second moments and w̃ under `model`.
pub fn e_step(ds: &Dataset, model: &McnmModel) -> Result<EStepState> {
    check_model(ds, model)?;
    e_step_with(&Layout::new(ds), model, DEFAULT_RIDGE)
}

/// Adds a ridge to `sigma` when it does not factorize; the flag reports
/// whether that happened.
pub(crate) fn repair_covariance(mut sigma: DMatrix<f64>, ridge: f64, context: &str) -> Result<(DMatrix<f64>, bool)> {
    let factor = SpdFactor::new(&sigma, ridge, context)?;
    let bump = factor.ridge_added();
    if bump > 0.0 {
        for k in 0..sigma.nrows() {
            sigma[(k, k)] += bump;
        }
    }
    Ok((sigma, bump > 0.0))
}

pub(crate) fn cm_step_1_with(
    ds: &Dataset,
    layout: &Layout,
    state: &EStepState,
    model_prev: &McnmModel,
    cfg: &FitConfig,
) -> Result<Cm1Update> {
    let (n, d, gg) = (ds.n(), ds.d(), model_prev.g());
    let threshold = cfg.min_mass_fraction * n as f64;
    let mut update = Cm1Update {
        pi: Vec::with_capacity(gg),
        alpha: Vec::with_capacity(gg),
        mu: Vec::with_capacity(gg),
        sigma: Vec::with_capacity(gg),
        repaired: Vec::with_capacity(gg),
    };
    for g in 0..gg {
        let z_sum: f64 = state.z_tilde.column(g).iter().sum();
        if !(z_sum >= threshold) || z_sum <= 0.0 {
            return Err(Error::EmptyComponent {
                component: g,
                mass: z_sum,
                threshold,
            });
        }
        let zv_sum: f64 = (0..n).map(|i| state.z_tilde[(i, g)] * state.v_tilde[(i, g)]).sum();
        let alpha = (zv_sum / z_sum).clamp(cfg.alpha_min, cfg.alpha_max);

        let mut w_sum = 0.0;
        let mut mu_acc = DVector::zeros(d);
        for i in 0..n {
            let w = state.w_tilde[(i, g)];
            w_sum += w;
            mu_acc.axpy(w, &layout.stacked(ds, i, state.x_tilde(i, g)), 1.0);
        }
        if !(w_sum > 0.0) {
            return Err(Error::EmptyComponent {
                component: g,
                mass: w_sum,
                threshold,
            });
        }
        let mu = mu_acc / w_sum;
        let center = match cfg.cm_rule {
            CmRule::Printed => &model_prev.components[g].mu,
            CmRule::Exact => &mu,
        };
        let mut s_acc = DMatrix::zeros(d, d);
        for i in 0..n {
            let w = state.w_tilde[(i, g)];
            let view = &layout.views[i];
            let e = layout.stacked(ds, i, state.x_tilde(i, g)) - center;
            s_acc.ger(w, &e, &e, 1.0);
            if !view.missing_idx.is_empty() {
                let cw = match cfg.cm_rule {
                    CmRule::Printed => w,
                    CmRule::Exact => state.z_tilde[(i, g)],
                };
                let xt = state.x_tilde(i, g);
                let correction = state.xx_tilde(i, g) - xt * xt.transpose();
                for (a, &ja) in view.missing_idx.iter().enumerate() {
                    for (b, &jb) in view.missing_idx.iter().enumerate() {
                        s_acc[(ja, jb)] += cw * correction[(a, b)];
                    }
                }
            }
        }
        let mut sigma = s_acc / z_sum;
        crate::math::symmetrize(&mut sigma);
        let (sigma, repaired) = repair_covariance(sigma, cfg.ridge, &format!("component {g} scale update"))?;
        update.repaired.push(repaired);
        update.pi.push(z_sum / n as f64);
        update.alpha.push(alpha);
        update.mu.push(mu);
        update.sigma.push(sigma);
    }
    Ok(update)
}

/// First CM-step: updates π, α, μ and Σ with η held at its previous value.
pub fn cm_step_1(ds: &Dataset, state: &EStepState, model_prev: &McnmModel, cfg: &FitConfig) -> Result<Cm1Update> {
    check_state(ds, state, model_prev.g())?;
    cm_step_1_with(ds, &Layout::new(ds), state, model_prev, cfg)
}

pub(crate) fn cm_step_2_with(
    ds: &Dataset,
    layout: &Layout,
    state: &EStepState,
    mu_new: &[DVector<f64>],
    sigma_new: &[DMatrix<f64>],
    eta_prev: &[f64],
    cfg: &FitConfig,
) -> Result<Cm2Update> {
    let n = ds.n();
    let gg = mu_new.len();
    let mut eta = Vec::with_capacity(gg);
    let mut no_contamination = Vec::with_capacity(gg);
    for g in 0..gg {
        let factor = SpdFactor::new(&sigma_new[g], cfg.ridge, &format!("component {g} in eta update"))?;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut precision: Option<DMatrix<f64>> = None;
        for i in 0..n {
            let bad_mass = state.z_tilde[(i, g)] * (1.0 - state.v_tilde[(i, g)]);
            if bad_mass == 0.0 {
                continue;
            }
            let view = &layout.views[i];
            let x_hat = layout.stacked(ds, i, state.x_tilde(i, g));
            num += bad_mass * factor.mahalanobis(&(x_hat - &mu_new[g]));
            match cfg.cm_rule {
                CmRule::Printed => den += bad_mass * view.d_obs as f64,
                CmRule::Exact => {
                    den += bad_mass * ds.d() as f64;
                    if !view.missing_idx.is_empty() {
                        let inv = precision.get_or_insert_with(|| factor.solve(&DMatrix::identity(ds.d(), ds.d())));
                        let xt = state.x_tilde(i, g);
                        let c = state.xx_tilde(i, g) - xt * xt.transpose();
                        let mut tr = 0.0;
                        for (a, &ja) in view.missing_idx.iter().enumerate() {
                            for (b, &jb) in view.missing_idx.iter().enumerate() {
                                tr += inv[(ja, jb)] * c[(b, a)];
                            }
                        }
                        num += bad_mass * eta_prev[g] * tr;
                    }
                }
            }
        }
        if den > 0.0 && num.is_finite() {
            eta.push((num / den).max(cfg.eta_min));
            no_contamination.push(false);
        } else {
            eta.push(eta_prev[g]);
            no_contamination.push(true);
        }
    }
    Ok(Cm2Update { eta, no_contamination })
}

/// Second CM-step: updates η from the new location and scale.
pub fn cm_step_2(
    ds: &Dataset,
    state: &EStepState,
    mu_new: &[DVector<f64>],
    sigma_new: &[DMatrix<f64>],
    eta_prev: &[f64],
    cfg: &FitConfig,
) -> Result<Cm2Update> {
    check_state(ds, state, mu_new.len())?;
    if sigma_new.len() != mu_new.len() || eta_prev.len() != mu_new.len() {
        return Err(Error::Contract("cm_step_2 inputs have different component counts".into()));
    }
    cm_step_2_with(ds, &Layout::new(ds), state, mu_new, sigma_new, eta_prev, cfg)
}

fn check_state(ds: &Dataset, state: &EStepState, g: usize) -> Result<()> {
    if state.z_tilde.shape() != (ds.n(), g) || state.x_tilde.len() != ds.n() * g {
        return Err(Error::Contract("E-step state does not match the dataset and model".into()));
    }
    Ok(())
}

/// One full ECM update: E-step results in, next model out.
pub(crate) fn ecm_update(
    ds: &Dataset,
    layout: &Layout,
    state: &EStepState,
    model: &McnmModel,
    cfg: &FitConfig,
    flags: &mut BTreeSet<String>,
) -> Result<McnmModel> {
    let cm1 = cm_step_1_with(ds, layout, state, model, cfg)?;
    let eta_prev: Vec<f64> = model.components.iter().map(|c| c.eta).collect();
    let cm2 = cm_step_2_with(ds, layout, state, &cm1.mu, &cm1.sigma, &eta_prev, cfg)?;
    for (g, &flag) in cm1.repaired.iter().enumerate() {
        if flag {
            flags.insert(format!("ridge_repair:{g}"));
        }
    }
    for (g, &flag) in cm2.no_contamination.iter().enumerate() {
        if flag {
            flags.insert(format!("no_contamination:{g}"));
        }
    }
    let components = cm1
        .mu
        .into_iter()
        .zip(cm1.sigma)
        .zip(cm1.alpha)
        .zip(cm2.eta)
        .map(|(((mu, sigma), alpha), eta)| McnComponent { mu, sigma, alpha, eta })
        .collect();
    Ok(McnmModel { pi: cm1.pi, components })
}

pub(crate) struct McnmEngine<'a> {
    pub ds: &'a Dataset,
    pub layout: Layout,
    pub cfg: &'a FitConfig,
}

impl<'a> McnmEngine<'a> {
    pub fn new(ds: &'a Dataset, cfg: &'a FitConfig) -> Self {
        Self {
            ds,
            layout: Layout::new(ds),
            cfg,
        }
    }
}

impl Engine for McnmEngine<'_> {
    type Model = McnmModel;
    type State = EStepState;

    fn initial_model(&self, z0: &DMatrix<f64>, imputed: &[f64]) -> Result<McnmModel> {
        let (pi, mus, sigmas) = init::weighted_moments(imputed, self.ds.d(), z0)?;
        let alpha = self.cfg.init_alpha.clamp(self.cfg.alpha_min, self.cfg.alpha_max);
        let eta = self.cfg.init_eta.max(self.cfg.eta_min);
        Ok(McnmModel {
            pi,
            components: mus
                .into_iter()
                .zip(sigmas)
                .map(|(mu, sigma)| McnComponent { mu, sigma, alpha, eta })
                .collect(),
        })
    }

    fn expect(&self, model: &McnmModel) -> Result<EStepState> {
        e_step_with(&self.layout, model, self.cfg.ridge)
    }

    fn loglik(&self, state: &EStepState) -> f64 {
        state.loglik
    }

    fn maximize(&self, state: &EStepState, model: &McnmModel, flags: &mut BTreeSet<String>) -> Result<McnmModel> {
        ecm_update(self.ds, &self.layout, state, model, self.cfg, flags)
    }
}

/// Hard labels (argmax of z̃, ties to the lowest index) and outlier flags
/// (ṽ of the assigned component strictly below 0.5).
pub fn classify(z_tilde: &DMatrix<f64>, v_tilde: &DMatrix<f64>) -> (Vec<usize>, Vec<bool>) {
    let labels = crate::result::argmax_rows(z_tilde);
    let flags = labels
        .iter()
        .enumerate()
        .map(|(i, &g)| v_tilde[(i, g)] < 0.5)
        .collect();
    (labels, flags)
}

pub fn classify_points(result: &FitResult) -> (Vec<usize>, Vec<bool>) {
    match &result.posterior {
        Posterior::Mcnm(state) => classify(&state.z_tilde, &state.v_tilde),
        Posterior::Tmix(state) => (
            crate::result::argmax_rows(&state.z_tilde),
            vec![false; state.z_tilde.nrows()],
        ),
    }
}

/// Fills each missing cell with x̃ of the row's assigned component.
pub(crate) fn impute_with(ds: &Dataset, layout: &Layout, labels: &[usize], x_tilde: &[DVector<f64>], g: usize) -> Result<Dataset> {
    ds.filled(|i, j| {
        let pos = layout.views[i]
            .missing_idx
            .iter()
            .position(|&m| m == j)
            .expect("missing cell has a view entry");
        x_tilde[i * g + labels[i]][pos]
    })
}

fn finish(ds: &Dataset, engine: &McnmEngine<'_>, run: engine::Run<McnmModel, EStepState>, starts: Vec<engine::StartSummary>) -> Result<FitResult> {
    let (labels, outlier_flag) = classify(&run.state.z_tilde, &run.state.v_tilde);
    let imputed = impute_with(ds, &engine.layout, &labels, &run.state.x_tilde, run.model.g())?;
    let loglik = *run.trace.last().unwrap();
    let bic = -2.0 * loglik + run.model.n_parameters() as f64 * (ds.n() as f64).ln();
    Ok(FitResult {
        model: FittedModel::Mcnm(run.model),
        posterior: Posterior::Mcnm(run.state),
        loglik_trace: run.trace,
        labels,
        outlier_flag,
        imputed,
        n_iter: run.n_iter,
        converged: run.converged,
        loglik,
        bic,
        flags: run.flags.into_iter().collect(),
        starts,
    })
}

/// Fits a G-component contaminated-normal mixture by ECM with multiple
/// starts, keeping the start with the highest final log-likelihood.
pub fn fit_mcnm(ds: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    engine::check_fit_input(ds, cfg)?;
    let eng = McnmEngine::new(ds, cfg);
    let (run, starts) = engine::run_starts(&eng, ds, cfg)?;
    finish(ds, &eng, run, starts)
}

/// Runs ECM from a given model (single start).
pub fn fit_mcnm_from(ds: &Dataset, model: McnmModel, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    check_model(ds, &model)?;
    let eng = McnmEngine::new(ds, cfg);
    let run = engine::run_from(&eng, model, cfg)?;
    let summary = engine::StartSummary {
        start: 0,
        loglik: run.trace.last().copied(),
        n_iter: run.n_iter,
        converged: run.converged,
        max_decrease: engine::max_decrease(&run.trace),
        error: None,
    };
    finish(ds, &eng, run, vec![summary])
}
