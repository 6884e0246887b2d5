//! EM for mixtures of multivariate Student-t distributions with values
//! missing at random. The latent data are component memberships, the
//! gamma-distributed scale weights and the missing coordinates.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::config::FitConfig;
use crate::data::Dataset;
use crate::engine::{self, Engine};
use crate::error::{Error, Result};
use crate::init;
use crate::math::{log_sum_exp, PartitionedNormal, SpdFactor, LN_2PI};
use crate::mcnm::{impute_with, repair_covariance, Layout};
use crate::model::{FittedModel, TComponent, TmixModel};
use crate::result::{argmax_rows, FitResult, Posterior};

/// Posterior quantities of one E-step of the t mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct TmixState {
    pub z_tilde: DMatrix<f64>,
    /// `(ν + d_i^o) / (ν + δ(x_i^o))`, the expected scale weight.
    pub u_tilde: DMatrix<f64>,
    pub x_tilde: Vec<DVector<f64>>,
    /// Conditional covariance of the missing block (before the 1/u scaling).
    pub cond_cov: Vec<DMatrix<f64>>,
    /// Observed dimension per row.
    pub d_obs: Vec<usize>,
    pub loglik: f64,
}

impl TmixState {
    pub fn g(&self) -> usize {
        self.z_tilde.ncols()
    }

    pub fn x_tilde(&self, i: usize, g: usize) -> &DVector<f64> {
        &self.x_tilde[i * self.g() + g]
    }
}

/// Log-density of a p-variate t with squared distance `delta`.
pub fn t_log_density(delta: f64, log_det: f64, dim: usize, nu: f64) -> f64 {
    let p = dim as f64;
    ln_gamma(0.5 * (nu + p)) - ln_gamma(0.5 * nu) - 0.5 * p * (nu.ln() + LN_2PI - std::f64::consts::LN_2)
        - 0.5 * log_det
        - 0.5 * (nu + p) * (delta / nu).ln_1p()
}

/// Scale weight `(ν + p)/(ν + δ)`.
pub fn scale_weight(delta: f64, dim: usize, nu: f64) -> f64 {
    (nu + dim as f64) / (nu + delta)
}

pub(crate) fn e_step_with(layout: &Layout, model: &TmixModel, ridge: f64) -> Result<TmixState> {
    let n = layout.views.len();
    let gg = model.g();
    let mut log_weighted = DMatrix::zeros(n, gg);
    let mut u = DMatrix::zeros(n, gg);
    let mut x_tilde = vec![DVector::zeros(0); n * gg];
    let mut cond_cov = vec![DMatrix::zeros(0, 0); n * gg];
    for (g, comp) in model.components.iter().enumerate() {
        let ln_pi = model.pi[g].ln();
        for pattern in &layout.patterns.patterns {
            let part = PartitionedNormal::new(
                &comp.mu,
                &comp.sigma,
                &pattern.observed_idx,
                &pattern.missing_idx,
                ridge,
                &format!("component {g}, observed coordinates {:?}", pattern.observed_idx),
            )?;
            let d_obs = pattern.observed_idx.len();
            for &i in &pattern.rows {
                let diff = &layout.observed[i] - &part.mu_obs;
                let delta = part.factor_oo.mahalanobis(&diff);
                log_weighted[(i, g)] = ln_pi + t_log_density(delta, part.factor_oo.log_det(), d_obs, comp.nu);
                u[(i, g)] = scale_weight(delta, d_obs, comp.nu);
                if !pattern.missing_idx.is_empty() {
                    x_tilde[i * gg + g] = &part.mu_mis + &part.regression * &diff;
                    cond_cov[i * gg + g] = part.cond_cov.clone();
                }
            }
        }
    }
    let mut z = DMatrix::zeros(n, gg);
    let mut loglik = 0.0;
    for i in 0..n {
        let terms: Vec<f64> = log_weighted.row(i).iter().copied().collect();
        let l = log_sum_exp(&terms);
        if !l.is_finite() {
            return Err(Error::DegenerateRow { row: i });
        }
        loglik += l;
        for g in 0..gg {
            z[(i, g)] = (log_weighted[(i, g)] - l).exp();
        }
    }
    Ok(TmixState {
        z_tilde: z,
        u_tilde: u,
        x_tilde,
        cond_cov,
        d_obs: layout.views.iter().map(|v| v.d_obs).collect(),
        loglik,
    })
}

/// Degrees of freedom update: the root in `[lo, hi]` of
/// `1 - ψ(ν/2) + ln(ν/2) + c`, which is decreasing in ν. Returns the root and
/// whether it had to be clamped to a bound.
pub fn solve_nu(c: f64, lo: f64, hi: f64) -> (f64, bool) {
    let f = |nu: f64| 1.0 - digamma(0.5 * nu) + (0.5 * nu).ln() + c;
    if f(lo) <= 0.0 {
        return (lo, true);
    }
    if f(hi) >= 0.0 {
        return (hi, true);
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if f(mid.exp()) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-14 {
            break;
        }
    }
    ((0.5 * (a + b)).exp(), false)
}

pub(crate) fn m_step(
    ds: &Dataset,
    layout: &Layout,
    state: &TmixState,
    model: &TmixModel,
    cfg: &FitConfig,
    flags: &mut BTreeSet<String>,
) -> Result<TmixModel> {
    let (n, d, gg) = (ds.n(), ds.d(), model.g());
    let threshold = cfg.min_mass_fraction * n as f64;
    let mut pi = Vec::with_capacity(gg);
    let mut components = Vec::with_capacity(gg);
    for g in 0..gg {
        let z_sum: f64 = state.z_tilde.column(g).iter().sum();
        if !(z_sum >= threshold) || z_sum <= 0.0 {
            return Err(Error::EmptyComponent {
                component: g,
                mass: z_sum,
                threshold,
            });
        }
        let mut zu_sum = 0.0;
        let mut mu_acc = DVector::zeros(d);
        let stacked: Vec<DVector<f64>> = (0..n).map(|i| layout.stacked(ds, i, state.x_tilde(i, g))).collect();
        for (i, x_hat) in stacked.iter().enumerate() {
            let zu = state.z_tilde[(i, g)] * state.u_tilde[(i, g)];
            zu_sum += zu;
            mu_acc.axpy(zu, x_hat, 1.0);
        }
        let mu = mu_acc / zu_sum;
        let mut s = DMatrix::zeros(d, d);
        for (i, x_hat) in stacked.iter().enumerate() {
            let z = state.z_tilde[(i, g)];
            let e = x_hat - &mu;
            s.ger(z * state.u_tilde[(i, g)], &e, &e, 1.0);
            let missing = &layout.views[i].missing_idx;
            if !missing.is_empty() {
                let c = &state.cond_cov[i * gg + g];
                for (a, &ja) in missing.iter().enumerate() {
                    for (b, &jb) in missing.iter().enumerate() {
                        s[(ja, jb)] += z * c[(a, b)];
                    }
                }
            }
        }
        let mut sigma = s / z_sum;
        crate::math::symmetrize(&mut sigma);
        let (sigma, repaired) = repair_covariance(sigma, cfg.ridge, &format!("component {g} scale update"))?;
        if repaired {
            flags.insert(format!("ridge_repair:{g}"));
        }

        let nu_old = model.components[g].nu;
        let nu = match cfg.nu_fixed {
            Some(nu) => nu,
            None => {
                let mut acc = 0.0;
                for i in 0..n {
                    let z = state.z_tilde[(i, g)];
                    let u = state.u_tilde[(i, g)];
                    let half = 0.5 * (nu_old + state.d_obs[i] as f64);
                    acc += z * (u.ln() - u + digamma(half) - half.ln());
                }
                let (nu, clamped) = solve_nu(acc / z_sum, cfg.nu_min, cfg.nu_max);
                if clamped {
                    flags.insert(format!("nu_clamped:{g}"));
                }
                nu
            }
        };
        pi.push(z_sum / n as f64);
        components.push(TComponent { mu, sigma, nu });
    }
    Ok(TmixModel { pi, components })
}

pub(crate) struct TmixEngine<'a> {
    ds: &'a Dataset,
    layout: Layout,
    cfg: &'a FitConfig,
}

impl Engine for TmixEngine<'_> {
    type Model = TmixModel;
    type State = TmixState;

    fn initial_model(&self, z0: &DMatrix<f64>, imputed: &[f64]) -> Result<TmixModel> {
        let (pi, mus, sigmas) = init::weighted_moments(imputed, self.ds.d(), z0)?;
        let nu = self.cfg.nu_fixed.unwrap_or(self.cfg.init_nu);
        Ok(TmixModel {
            pi,
            components: mus
                .into_iter()
                .zip(sigmas)
                .map(|(mu, sigma)| TComponent { mu, sigma, nu })
                .collect(),
        })
    }

    fn expect(&self, model: &TmixModel) -> Result<TmixState> {
        e_step_with(&self.layout, model, self.cfg.ridge)
    }

    fn loglik(&self, state: &TmixState) -> f64 {
        state.loglik
    }

    fn maximize(&self, state: &TmixState, model: &TmixModel, flags: &mut BTreeSet<String>) -> Result<TmixModel> {
        m_step(self.ds, &self.layout, state, model, self.cfg, flags)
    }
}

fn finish(
    ds: &Dataset,
    eng: &TmixEngine<'_>,
    cfg: &FitConfig,
    run: engine::Run<TmixModel, TmixState>,
    starts: Vec<engine::StartSummary>,
) -> Result<FitResult> {
    let labels = argmax_rows(&run.state.z_tilde);
    let imputed = impute_with(ds, &eng.layout, &labels, &run.state.x_tilde, run.model.g())?;
    let loglik = *run.trace.last().unwrap();
    let k = run.model.n_parameters(cfg.nu_fixed.is_none());
    Ok(FitResult {
        outlier_flag: vec![false; ds.n()],
        labels,
        imputed,
        bic: -2.0 * loglik + k as f64 * (ds.n() as f64).ln(),
        loglik,
        model: FittedModel::Tmix(run.model),
        posterior: Posterior::Tmix(run.state),
        loglik_trace: run.trace,
        n_iter: run.n_iter,
        converged: run.converged,
        flags: run.flags.into_iter().collect(),
        starts,
    })
}

/// Fits a G-component t mixture by EM. The t model has no good/bad latent
/// variable, so `outlier_flag` is all false; see [`distance_outliers`].
pub fn fit_tmix(ds: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    engine::check_fit_input(ds, cfg)?;
    let eng = TmixEngine {
        ds,
        layout: Layout::new(ds),
        cfg,
    };
    let (run, starts) = engine::run_starts(&eng, ds, cfg)?;
    finish(ds, &eng, cfg, run, starts)
}

/// Runs EM from a given model (single start).
pub fn fit_tmix_from(ds: &Dataset, model: TmixModel, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    model.validate()?;
    let eng = TmixEngine {
        ds,
        layout: Layout::new(ds),
        cfg,
    };
    let run = engine::run_from(&eng, model, cfg)?;
    let summary = engine::StartSummary {
        start: 0,
        loglik: run.trace.last().copied(),
        n_iter: run.n_iter,
        converged: run.converged,
        max_decrease: engine::max_decrease(&run.trace),
        error: None,
    };
    finish(ds, &eng, cfg, run, vec![summary])
}

/// Distance-based outlier call for any fit: row i is flagged when
/// `δ(x̂_i, μ_label; Σ_label)` exceeds the `quantile` of a chi-square with d
/// degrees of freedom, where x̂_i is the imputed row.
pub fn distance_outliers(result: &FitResult, quantile: f64) -> Result<Vec<bool>> {
    let d = result.model.d();
    let cutoff = ChiSquared::new(d as f64)
        .map_err(|e| Error::Domain(e.to_string()))?
        .inverse_cdf(quantile);
    let factors = (0..result.model.g())
        .map(|g| SpdFactor::new(result.model.location(g).1, crate::math::DEFAULT_RIDGE, &format!("component {g}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(result
        .labels
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let x = DVector::from_column_slice(result.imputed.row(i));
            factors[g].mahalanobis(&(x - result.model.location(g).0)) > cutoff
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_density_matches_univariate_formula() {
        // standard t with 3 dof at x = 1.5: Γ(2)/(Γ(1.5)√(3π)) (1 + 0.75)^{-2}
        let expected = (1.0 / (statrs::function::gamma::gamma(1.5) * (3.0 * std::f64::consts::PI).sqrt())
            * 1.75f64.powf(-2.0))
        .ln();
        let got = t_log_density(2.25, 0.0, 1, 3.0);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn weight_decreases_with_distance() {
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let u = scale_weight(k as f64, 2, 4.0);
            assert!(u < last);
            last = u;
        }
    }

    #[test]
    fn nu_solver_brackets() {
        let (nu, clamped) = solve_nu(-1.05, 2.0001, 200.0);
        assert!(!clamped);
        let f = 1.0 - digamma(0.5 * nu) + (0.5 * nu).ln() - 1.05;
        assert!(f.abs() < 1e-10);
        assert_eq!(solve_nu(-1.0, 2.0001, 200.0), (200.0, true));
        assert_eq!(solve_nu(-50.0, 2.0001, 200.0), (2.0001, true));
    }
}
