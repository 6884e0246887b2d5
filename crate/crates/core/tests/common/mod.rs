// Independent reference implementations on plain vectors. Nothing here calls
// into the crate's numerics, so agreement is a real check.
#![allow(dead_code, clippy::needless_range_loop)]

use mcnm::config::CmRule;
use mcnm::init::{initial_assignment, mean_impute, weighted_moments};
use mcnm::mcnm::e_step;
use mcnm::simulate::{generate_scenario, Family, ScenarioConfig};
use mcnm::{fit_mcnm_from, Dataset, FitConfig, McnComponent, McnmModel, TComponent, TmixModel};
use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::{digamma, ln_gamma};

pub type Mat = Vec<Vec<f64>>;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gauss-Jordan inverse with partial pivoting, plus ln|det|.
pub fn gj_inverse(a: &Mat) -> (Mat, f64) {
    let n = a.len();
    let mut m: Mat = a.clone();
    let mut inv: Mat = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    let mut log_det = 0.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&x, &y| m[x][c].abs().partial_cmp(&m[y][c].abs()).unwrap())
            .unwrap();
        m.swap(c, p);
        inv.swap(c, p);
        let piv = m[c][c];
        assert!(piv != 0.0, "singular matrix in oracle");
        log_det += piv.abs().ln();
        for j in 0..n {
            m[c][j] /= piv;
            inv[c][j] /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                for j in 0..n {
                    m[r][j] -= f * m[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    (inv, log_det)
}

pub fn quad(inv: &Mat, e: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..e.len() {
        for j in 0..e.len() {
            s += e[i] * inv[i][j] * e[j];
        }
    }
    s
}

pub fn normal_log(delta: f64, log_det: f64, p: usize) -> f64 {
    -0.5 * (p as f64 * LN_2PI + log_det + delta)
}

fn lse2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn lse(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone)]
pub struct OComp {
    pub mu: Vec<f64>,
    pub sigma: Mat,
    pub alpha: f64,
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub struct OModel {
    pub pi: Vec<f64>,
    pub comps: Vec<OComp>,
}

fn mat_to_rows(m: &DMatrix<f64>) -> Mat {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn rows_to_mat(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), m.len(), |i, j| m[i][j])
}

impl OModel {
    pub fn from_model(m: &McnmModel) -> Self {
        Self {
            pi: m.pi.clone(),
            comps: m
                .components
                .iter()
                .map(|c| OComp {
                    mu: c.mu.iter().copied().collect(),
                    sigma: mat_to_rows(&c.sigma),
                    alpha: c.alpha,
                    eta: c.eta,
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> McnmModel {
        McnmModel {
            pi: self.pi.clone(),
            components: self
                .comps
                .iter()
                .map(|c| McnComponent {
                    mu: DVector::from_column_slice(&c.mu),
                    sigma: rows_to_mat(&c.sigma),
                    alpha: c.alpha,
                    eta: c.eta,
                })
                .collect(),
        }
    }

    /// Largest relative gap over every parameter.
    pub fn max_gap(&self, m: &McnmModel) -> f64 {
        let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + a.abs().max(b.abs()));
        let mut worst: f64 = 0.0;
        for (g, c) in self.comps.iter().enumerate() {
            let k = &m.components[g];
            worst = worst.max(rel(self.pi[g], m.pi[g]));
            worst = worst.max(rel(c.alpha, k.alpha));
            worst = worst.max(rel(c.eta, k.eta));
            for i in 0..c.mu.len() {
                worst = worst.max(rel(c.mu[i], k.mu[i]));
                for j in 0..c.mu.len() {
                    worst = worst.max(rel(c.sigma[i][j], k.sigma[(i, j)]));
                }
            }
        }
        worst
    }
}

pub fn rows_of(ds: &Dataset) -> Vec<Vec<f64>> {
    (0..ds.n()).map(|i| ds.row(i).to_vec()).collect()
}

/// Per-row, per-component quantities of the complete-data E-step.
pub struct OState {
    pub z: Mat,
    pub v: Mat,
    pub loglik: f64,
}

fn mcn_terms(x: &[f64], c: &OComp) -> (f64, f64) {
    let p = x.len();
    let (inv, ld) = gj_inverse(&c.sigma);
    let e: Vec<f64> = x.iter().zip(&c.mu).map(|(a, b)| a - b).collect();
    let delta = quad(&inv, &e);
    let good = c.alpha.ln() + normal_log(delta, ld, p);
    let bad = (1.0 - c.alpha).ln() + normal_log(delta / c.eta, ld + p as f64 * c.eta.ln(), p);
    (good, bad)
}

pub fn estep_complete(x: &[Vec<f64>], m: &OModel) -> OState {
    let gg = m.comps.len();
    let mut z = vec![vec![0.0; gg]; x.len()];
    let mut v = vec![vec![0.0; gg]; x.len()];
    let mut loglik = 0.0;
    for (i, xi) in x.iter().enumerate() {
        let mut lt = vec![0.0; gg];
        for (g, c) in m.comps.iter().enumerate() {
            let (good, bad) = mcn_terms(xi, c);
            let f = lse2(good, bad);
            lt[g] = m.pi[g].ln() + f;
            v[i][g] = (good - f).exp();
        }
        let tot = lse(&lt);
        loglik += tot;
        for g in 0..gg {
            z[i][g] = (lt[g] - tot).exp();
        }
    }
    OState { z, v, loglik }
}

#[derive(Clone, Copy)]
pub struct Bounds {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub eta_min: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            alpha_min: 0.5,
            alpha_max: 1.0 - 1e-6,
            eta_min: 1.001,
        }
    }
}

/// One complete-data ECM cycle. `center_new` picks whether the scale update
/// is centered on the new mean or the previous one.
pub fn ecm_complete_step(x: &[Vec<f64>], m: &OModel, s: &OState, b: Bounds, center_new: bool) -> OModel {
    let n = x.len();
    let d = x[0].len();
    let mut out = m.clone();
    for (g, c) in m.comps.iter().enumerate() {
        let zs: f64 = (0..n).map(|i| s.z[i][g]).sum();
        let zv: f64 = (0..n).map(|i| s.z[i][g] * s.v[i][g]).sum();
        let w: Vec<f64> = (0..n)
            .map(|i| s.z[i][g] * (s.v[i][g] + (1.0 - s.v[i][g]) / c.eta))
            .collect();
        let ws: f64 = w.iter().sum();
        let mut mu = vec![0.0; d];
        for i in 0..n {
            for k in 0..d {
                mu[k] += w[i] * x[i][k];
            }
        }
        for v in mu.iter_mut() {
            *v /= ws;
        }
        let center = if center_new { mu.clone() } else { c.mu.clone() };
        let mut sigma = vec![vec![0.0; d]; d];
        for i in 0..n {
            for a in 0..d {
                for bb in 0..d {
                    sigma[a][bb] += w[i] * (x[i][a] - center[a]) * (x[i][bb] - center[bb]);
                }
            }
        }
        for row in sigma.iter_mut() {
            for v in row.iter_mut() {
                *v /= zs;
            }
        }
        let (inv, _) = gj_inverse(&sigma);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let e: Vec<f64> = x[i].iter().zip(&mu).map(|(a, b)| a - b).collect();
            let bad = s.z[i][g] * (1.0 - s.v[i][g]);
            num += bad * quad(&inv, &e);
            den += bad * d as f64;
        }
        let eta = if den > 0.0 { (num / den).max(b.eta_min) } else { c.eta };
        out.pi[g] = zs / n as f64;
        out.comps[g] = OComp {
            mu,
            sigma,
            alpha: (zv / zs).clamp(b.alpha_min, b.alpha_max),
            eta,
        };
    }
    out
}

/// Runs `iters` cycles and returns every intermediate model plus the
/// log-likelihood trace (length `iters + 1`).
pub fn ecm_complete(x: &[Vec<f64>], m0: &OModel, iters: usize, b: Bounds, center_new: bool) -> (Vec<OModel>, Vec<f64>) {
    let mut models = vec![m0.clone()];
    let mut s = estep_complete(x, m0);
    let mut trace = vec![s.loglik];
    for _ in 0..iters {
        let next = ecm_complete_step(x, models.last().unwrap(), &s, b, center_new);
        s = estep_complete(x, &next);
        trace.push(s.loglik);
        models.push(next);
    }
    (models, trace)
}

/// Weighted Gaussian-mixture M-step: proportions, means and covariances
/// centered on the new means.
pub fn gmm_mstep(x: &[Vec<f64>], z: &Mat) -> (Vec<f64>, Mat, Vec<Mat>) {
    let n = x.len();
    let d = x[0].len();
    let gg = z[0].len();
    let mut pi = vec![0.0; gg];
    let mut mus = vec![vec![0.0; d]; gg];
    let mut sigmas = vec![vec![vec![0.0; d]; d]; gg];
    for g in 0..gg {
        let zs: f64 = (0..n).map(|i| z[i][g]).sum();
        pi[g] = zs / n as f64;
        for i in 0..n {
            for k in 0..d {
                mus[g][k] += z[i][g] * x[i][k] / zs;
            }
        }
        for i in 0..n {
            for a in 0..d {
                for b in 0..d {
                    sigmas[g][a][b] += z[i][g] * (x[i][a] - mus[g][a]) * (x[i][b] - mus[g][b]) / zs;
                }
            }
        }
    }
    (pi, mus, sigmas)
}

/// Gaussian-mixture EM from given parameters.
pub fn gmm_em(x: &[Vec<f64>], pi: &[f64], mus: &Mat, sigmas: &[Mat], iters: usize) -> (Vec<f64>, Mat, Vec<Mat>) {
    let (mut pi, mut mus, mut sigmas) = (pi.to_vec(), mus.clone(), sigmas.to_vec());
    let d = x[0].len();
    for _ in 0..iters {
        let mut z = vec![vec![0.0; pi.len()]; x.len()];
        for (i, xi) in x.iter().enumerate() {
            let lt: Vec<f64> = (0..pi.len())
                .map(|g| {
                    let (inv, ld) = gj_inverse(&sigmas[g]);
                    let e: Vec<f64> = xi.iter().zip(&mus[g]).map(|(a, b)| a - b).collect();
                    pi[g].ln() + normal_log(quad(&inv, &e), ld, d)
                })
                .collect();
            let tot = lse(&lt);
            for g in 0..pi.len() {
                z[i][g] = (lt[g] - tot).exp();
            }
        }
        (pi, mus, sigmas) = gmm_mstep(x, &z);
    }
    (pi, mus, sigmas)
}

#[derive(Debug, Clone)]
pub struct TOComp {
    pub mu: Vec<f64>,
    pub sigma: Mat,
    pub nu: f64,
}

pub fn t_from_model(m: &TmixModel) -> (Vec<f64>, Vec<TOComp>) {
    (
        m.pi.clone(),
        m.components
            .iter()
            .map(|c| TOComp {
                mu: c.mu.iter().copied().collect(),
                sigma: mat_to_rows(&c.sigma),
                nu: c.nu,
            })
            .collect(),
    )
}

pub fn t_to_model(pi: &[f64], comps: &[TOComp]) -> TmixModel {
    TmixModel {
        pi: pi.to_vec(),
        components: comps
            .iter()
            .map(|c| TComponent {
                mu: DVector::from_column_slice(&c.mu),
                sigma: rows_to_mat(&c.sigma),
                nu: c.nu,
            })
            .collect(),
    }
}

fn t_log(delta: f64, ld: f64, p: usize, nu: f64) -> f64 {
    let p = p as f64;
    ln_gamma((nu + p) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * p * (nu * std::f64::consts::PI).ln() - 0.5 * ld
        - 0.5 * (nu + p) * (1.0 + delta / nu).ln()
}

/// Root of `1 - ψ(ν/2) + ln(ν/2) + c` on `[lo, hi]` by plain bisection.
fn nu_root(c: f64, lo: f64, hi: f64) -> f64 {
    let f = |nu: f64| 1.0 - digamma(nu / 2.0) + (nu / 2.0).ln() + c;
    if f(lo) <= 0.0 {
        return lo;
    }
    if f(hi) >= 0.0 {
        return hi;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..300 {
        let m = 0.5 * (a + b);
        if f(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Complete-data t-mixture EM with ν estimated per component. Returns the
/// final parameters and the log-likelihood trace.
pub fn t_em(x: &[Vec<f64>], pi: &[f64], comps: &[TOComp], iters: usize, nu_lo: f64, nu_hi: f64) -> (Vec<f64>, Vec<TOComp>, Vec<f64>) {
    let n = x.len();
    let d = x[0].len();
    let (mut pi, mut comps) = (pi.to_vec(), comps.to_vec());
    let gg = pi.len();
    let mut trace = Vec::new();
    for it in 0..=iters {
        let mut z = vec![vec![0.0; gg]; n];
        let mut u = vec![vec![0.0; gg]; n];
        let mut ll = 0.0;
        for i in 0..n {
            let mut lt = vec![0.0; gg];
            for g in 0..gg {
                let (inv, ld) = gj_inverse(&comps[g].sigma);
                let e: Vec<f64> = x[i].iter().zip(&comps[g].mu).map(|(a, b)| a - b).collect();
                let delta = quad(&inv, &e);
                lt[g] = pi[g].ln() + t_log(delta, ld, d, comps[g].nu);
                u[i][g] = (comps[g].nu + d as f64) / (comps[g].nu + delta);
            }
            let tot = lse(&lt);
            ll += tot;
            for g in 0..gg {
                z[i][g] = (lt[g] - tot).exp();
            }
        }
        trace.push(ll);
        if it == iters {
            break;
        }
        for g in 0..gg {
            let zs: f64 = (0..n).map(|i| z[i][g]).sum();
            let zus: f64 = (0..n).map(|i| z[i][g] * u[i][g]).sum();
            let mut mu = vec![0.0; d];
            for i in 0..n {
                for k in 0..d {
                    mu[k] += z[i][g] * u[i][g] * x[i][k] / zus;
                }
            }
            let mut sigma = vec![vec![0.0; d]; d];
            for i in 0..n {
                for a in 0..d {
                    for b in 0..d {
                        sigma[a][b] += z[i][g] * u[i][g] * (x[i][a] - mu[a]) * (x[i][b] - mu[b]) / zs;
                    }
                }
            }
            let nu_old = comps[g].nu;
            let half = (nu_old + d as f64) / 2.0;
            let c: f64 = (0..n)
                .map(|i| z[i][g] * (u[i][g].ln() - u[i][g] + digamma(half) - half.ln()))
                .sum::<f64>()
                / zs;
            pi[g] = zs / n as f64;
            comps[g] = TOComp {
                mu,
                sigma,
                nu: nu_root(c, nu_lo, nu_hi),
            };
        }
    }
    (pi, comps, trace)
}

/// Brute-force E-step for bivariate rows with at most one missing cell,
/// written out with explicit 2×2 algebra.
pub struct Estep2 {
    pub z: Mat,
    pub v: Mat,
    /// Conditional mean of the missing cell per (row, component); None when
    /// the row is complete.
    pub xt: Vec<Vec<Option<f64>>>,
    pub xxt: Vec<Vec<Option<f64>>>,
    pub w: Mat,
    pub loglik: f64,
}

pub fn estep_2d(rows: &[[Option<f64>; 2]], m: &OModel) -> Estep2 {
    let gg = m.comps.len();
    let n = rows.len();
    let mut out = Estep2 {
        z: vec![vec![0.0; gg]; n],
        v: vec![vec![0.0; gg]; n],
        xt: vec![vec![None; gg]; n],
        xxt: vec![vec![None; gg]; n],
        w: vec![vec![0.0; gg]; n],
        loglik: 0.0,
    };
    for (i, r) in rows.iter().enumerate() {
        let mut dens = vec![0.0; gg];
        for (g, c) in m.comps.iter().enumerate() {
            let s = &c.sigma;
            let (delta, det, p) = match r {
                [Some(a), Some(b)] => {
                    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
                    let (e0, e1) = (a - c.mu[0], b - c.mu[1]);
                    let delta = (s[1][1] * e0 * e0 - 2.0 * s[0][1] * e0 * e1 + s[0][0] * e1 * e1) / det;
                    (delta, det, 2.0)
                }
                [Some(a), None] | [None, Some(a)] => {
                    let (o, mi) = if r[0].is_some() { (0, 1) } else { (1, 0) };
                    let e = a - c.mu[o];
                    let xt = c.mu[mi] + s[mi][o] / s[o][o] * e;
                    let cc = s[mi][mi] - s[mi][o] * s[o][mi] / s[o][o];
                    out.xt[i][g] = Some(xt);
                    out.xxt[i][g] = Some(xt * xt + cc);
                    (e * e / s[o][o], s[o][o], 1.0)
                }
                [None, None] => panic!("empty row"),
            };
            let tau = std::f64::consts::TAU;
            let good = c.alpha * (-0.5 * delta).exp() / ((tau).powf(p / 2.0) * det.sqrt());
            let bad = (1.0 - c.alpha) * (-0.5 * delta / c.eta).exp()
                / ((tau * c.eta).powf(p / 2.0) * det.sqrt());
            dens[g] = m.pi[g] * (good + bad);
            out.v[i][g] = good / (good + bad);
        }
        let tot: f64 = dens.iter().sum();
        out.loglik += tot.ln();
        for g in 0..gg {
            out.z[i][g] = dens[g] / tot;
            let v = out.v[i][g];
            out.w[i][g] = out.z[i][g] * (v + (1.0 - v) / m.comps[g].eta);
        }
    }
    out
}

pub fn dataset_2d(rows: &[[Option<f64>; 2]]) -> Dataset {
    Dataset::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

pub fn as_mcnm(m: &mcnm::FittedModel) -> &McnmModel {
    match m {
        mcnm::FittedModel::Mcnm(m) => m,
        mcnm::FittedModel::Tmix(_) => panic!("expected a contaminated-normal fit"),
    }
}

pub fn as_tmix(m: &mcnm::FittedModel) -> &TmixModel {
    match m {
        mcnm::FittedModel::Tmix(m) => m,
        mcnm::FittedModel::Mcnm(_) => panic!("expected a t fit"),
    }
}

pub fn two_comp() -> OModel {
    OModel {
        pi: vec![0.35, 0.65],
        comps: vec![
            OComp {
                mu: vec![0.0, 0.5],
                sigma: vec![vec![1.2, 0.4], vec![0.4, 0.9]],
                alpha: 0.85,
                eta: 6.0,
            },
            OComp {
                mu: vec![1.5, -0.5],
                sigma: vec![vec![0.7, -0.25], vec![-0.25, 1.6]],
                alpha: 0.7,
                eta: 2.5,
            },
        ],
    }
}

/// Three-row bivariate fixtures, each with one missing cell somewhere.
pub fn estep_fixtures() -> Vec<[[Option<f64>; 2]; 3]> {
    vec![
        [[Some(0.4), Some(-0.2)], [Some(1.5), None], [None, Some(2.2)]],
        [[None, Some(0.0)], [Some(-2.0), Some(3.0)], [Some(0.7), Some(0.7)]],
        [[Some(4.0), Some(-1.0)], [Some(0.0), Some(0.0)], [Some(-0.3), None]],
    ]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

/// Largest relative gap between the crate's E-step arrays and the explicit
/// formulas.
pub fn estep_gap(rows: &[[Option<f64>; 2]], om: &OModel) -> f64 {
    let want = estep_2d(rows, om);
    let got = e_step(&dataset_2d(rows), &om.to_model()).unwrap();
    let mut worst = rel(got.loglik, want.loglik);
    for i in 0..rows.len() {
        for g in 0..om.comps.len() {
            worst = worst
                .max(rel(got.z_tilde[(i, g)], want.z[i][g]))
                .max(rel(got.v_tilde[(i, g)], want.v[i][g]))
                .max(rel(got.w_tilde[(i, g)], want.w[i][g]));
            match want.xt[i][g] {
                Some(xt) if got.x_tilde(i, g).len() == 1 => {
                    worst = worst
                        .max(rel(got.x_tilde(i, g)[0], xt))
                        .max(rel(got.xx_tilde(i, g)[(0, 0)], want.xxt[i][g].unwrap()));
                }
                None if got.x_tilde(i, g).is_empty() => {}
                _ => return f64::INFINITY,
            }
        }
    }
    worst
}

pub fn mcn_fixture(seed: u64, d: usize, g: usize, n: usize) -> Dataset {
    let cfg = ScenarioConfig {
        family: Family::Mcn,
        n,
        g,
        d,
        seed,
        far_shift: 4.0,
        ..ScenarioConfig::default()
    };
    generate_scenario(&cfg).unwrap().data
}

/// The model a single k-means start of `fit_mcnm` begins from.
pub fn reconstructed_start(ds: &Dataset, cfg: &FitConfig) -> McnmModel {
    let imputed = mean_impute(ds);
    let z0 = initial_assignment(ds, &imputed, cfg.g, 0, cfg.seed, cfg.kmeans_restarts).unwrap();
    let (pi, mus, sigmas) = weighted_moments(&imputed, ds.d(), &z0).unwrap();
    McnmModel {
        pi,
        components: mus
            .into_iter()
            .zip(sigmas)
            .map(|(mu, sigma)| McnComponent {
                mu,
                sigma,
                alpha: cfg.init_alpha,
                eta: cfg.init_eta,
            })
            .collect(),
    }
}

/// Runs the crate for 1..=iters iterations on a complete-data fixture and
/// returns the largest relative gap to the oracle over all parameters and
/// log-likelihoods at every iteration.
pub fn complete_oracle_gap(seed: u64, rule: CmRule, iters: usize) -> f64 {
    let d = 2 + (seed as usize % 2);
    let g = 1 + (seed as usize % 3);
    let ds = mcn_fixture(seed, d, g, 60);
    let cfg = FitConfig {
        g,
        seed,
        tol: 1e-300,
        cm_rule: rule,
        ..FitConfig::default()
    };
    let m0 = reconstructed_start(&ds, &cfg);
    let (models, trace) = ecm_complete(&rows_of(&ds), &OModel::from_model(&m0), iters, Bounds::default(), rule == CmRule::Exact);
    let mut worst: f64 = 0.0;
    for k in 1..=iters {
        let fit = fit_mcnm_from(&ds, m0.clone(), &FitConfig { max_iter: k, ..cfg.clone() }).unwrap();
        if fit.n_iter != k {
            return f64::INFINITY;
        }
        worst = worst.max(models[k].max_gap(as_mcnm(&fit.model)));
        for (a, b) in fit.loglik_trace.iter().zip(&trace) {
            worst = worst.max(rel(*a, *b));
        }
    }
    worst
}
