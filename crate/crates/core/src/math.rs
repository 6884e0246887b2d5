//! Dense kernels shared by both fitters: Gaussian and contaminated-Gaussian
//! log-densities, squared Mahalanobis distances, partitioned conditional
//! normals and a shift-stable log-sum-exp.
//!
//! Every factorization goes through [`SpdFactor`], a Cholesky factor with a
//! single ridge retry. No explicit inverses are formed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// ln(2π)
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Default relative ridge: `ridge * trace(Σ) / d` is added to the diagonal
/// when a plain Cholesky factorization fails.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// A squared Mahalanobis distance `(x-μ)ᵀ Σ⁻¹ (x-μ)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SquaredMahalanobis(f64);

impl SquaredMahalanobis {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Distribution of the missing block given the observed block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalNormal {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    ridge_added: f64,
}

impl SpdFactor {
    /// Factorizes `sigma`, retrying once with `ridge * trace/d` on the
    /// diagonal. `context` is attached to the error when both attempts fail.
    pub fn new(sigma: &DMatrix<f64>, ridge: f64, context: &str) -> Result<Self> {
        if !sigma.is_square() || sigma.nrows() == 0 {
            return Err(Error::Contract(format!(
                "covariance must be square and nonempty, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularCovariance {
                context: format!("{context}: non-finite entry"),
            });
        }
        if let Some(f) = Self::try_factor(sigma.clone(), 0.0) {
            return Ok(f);
        }
        let d = sigma.nrows() as f64;
        let bump = ridge * sigma.trace() / d;
        if bump > 0.0 && bump.is_finite() {
            let mut repaired = sigma.clone();
            for k in 0..sigma.nrows() {
                repaired[(k, k)] += bump;
            }
            if let Some(f) = Self::try_factor(repaired, bump) {
                return Ok(f);
            }
        }
        Err(Error::SingularCovariance {
            context: context.to_string(),
        })
    }

    fn try_factor(m: DMatrix<f64>, ridge_added: f64) -> Option<Self> {
        let chol = Cholesky::new(m)?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return None;
        }
        Some(Self {
            chol,
            log_det,
            ridge_added,
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Diagonal increment that was needed to factorize, zero if none.
    pub fn ridge_added(&self) -> f64 {
        self.ridge_added
    }

    /// `diffᵀ Σ⁻¹ diff` via one triangular solve.
    pub fn mahalanobis(&self, diff: &DVector<f64>) -> f64 {
        let y = self
            .chol
            .l_dirty()
            .solve_lower_triangular(diff)
            .expect("Cholesky factor has a nonzero diagonal");
        y.norm_squared()
    }

    /// Solves `Σ X = b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// The factorized matrix, including any ridge.
    pub fn matrix(&self) -> DMatrix<f64> {
        self.chol.l() * self.chol.l().transpose()
    }
}

/// `ln Σ exp(terms)`, shifted by the maximum. Returns `-inf` when every term
/// is `-inf` (zero total density) and for an empty slice.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    if terms.len() == 1 {
        return terms[0];
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

/// Gaussian log-density from a precomputed Mahalanobis term and log-determinant.
#[inline]
pub fn gaussian_log_density(delta: f64, log_det: f64, dim: usize) -> f64 {
    -0.5 * (dim as f64 * LN_2PI + log_det + delta)
}

/// Contaminated-normal log-density from `δ(x, μ; Σ)` and `ln|Σ|`: the
/// inflated component has log-determinant `ln|Σ| + dim·ln η` and distance `δ/η`.
pub fn contaminated_log_density(delta: f64, log_det: f64, dim: usize, alpha: f64, eta: f64) -> f64 {
    let good = gaussian_log_density(delta, log_det, dim);
    if eta == 1.0 {
        return good;
    }
    let bad = gaussian_log_density(delta / eta, log_det + dim as f64 * eta.ln(), dim);
    log_sum_exp(&[alpha.ln() + good, (1.0 - alpha).ln() + bad])
}

fn check_dims(x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<()> {
    let d = x.len();
    if mu.len() != d || sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::Contract(format!(
            "dimension mismatch: x has {d}, mu has {}, sigma is {}x{}",
            mu.len(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    Ok(())
}

/// `ln f_MN(x; μ, Σ)`.
pub fn mn_log_density(x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    check_dims(x, mu, sigma)?;
    let f = SpdFactor::new(sigma, DEFAULT_RIDGE, "mn_log_density")?;
    Ok(gaussian_log_density(f.mahalanobis(&(x - mu)), f.log_det(), x.len()))
}

/// `ln[α f_MN(x; μ, Σ) + (1-α) f_MN(x; μ, ηΣ)]`, evaluated in log space.
pub fn mcn_log_density(
    x: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    alpha: f64,
    eta: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if !(eta >= 1.0) || !eta.is_finite() {
        return Err(Error::Domain(format!("eta must be finite and >= 1, got {eta}")));
    }
    check_dims(x, mu, sigma)?;
    let f = SpdFactor::new(sigma, DEFAULT_RIDGE, "mcn_log_density")?;
    let delta = f.mahalanobis(&(x - mu));
    Ok(contaminated_log_density(delta, f.log_det(), x.len(), alpha, eta))
}

pub fn squared_mahalanobis(
    x: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<SquaredMahalanobis> {
    check_dims(x, mu, sigma)?;
    let f = SpdFactor::new(sigma, DEFAULT_RIDGE, "squared_mahalanobis")?;
    Ok(SquaredMahalanobis(f.mahalanobis(&(x - mu)).max(0.0)))
}

/// Gathers `v[idx]`.
pub fn gather(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Gathers `m[rows, cols]`.
pub fn gather_block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

/// `(m + mᵀ)/2`, in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for r in 0..d {
        for c in (r + 1)..d {
            let avg = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = avg;
            m[(c, r)] = avg;
        }
    }
}

/// A normal distribution split by one observation pattern. Holds the
/// factorized observed block and, when the pattern has missing coordinates,
/// the regression `Σ^mo (Σ^oo)⁻¹` and the conditional covariance.
#[derive(Debug, Clone)]
pub struct PartitionedNormal {
    pub mu_obs: DVector<f64>,
    pub mu_mis: DVector<f64>,
    pub factor_oo: SpdFactor,
    pub regression: DMatrix<f64>,
    pub cond_cov: DMatrix<f64>,
}

impl PartitionedNormal {
    pub fn new(
        mu: &DVector<f64>,
        sigma: &DMatrix<f64>,
        observed_idx: &[usize],
        missing_idx: &[usize],
        ridge: f64,
        context: &str,
    ) -> Result<Self> {
        if observed_idx.is_empty() {
            return Err(Error::Contract("observed index set is empty".into()));
        }
        let sigma_oo = gather_block(sigma, observed_idx, observed_idx);
        let factor_oo = SpdFactor::new(&sigma_oo, ridge, context)?;
        let mu_obs = gather(mu, observed_idx);
        let mu_mis = gather(mu, missing_idx);
        let (regression, cond_cov) = if missing_idx.is_empty() {
            (DMatrix::zeros(0, observed_idx.len()), DMatrix::zeros(0, 0))
        } else {
            let sigma_om = gather_block(sigma, observed_idx, missing_idx);
            let sigma_mm = gather_block(sigma, missing_idx, missing_idx);
            // (Σ^oo)⁻¹ Σ^om, then transpose for Σ^mo (Σ^oo)⁻¹
            let solved = factor_oo.solve(&sigma_om);
            let mut cond = sigma_mm - sigma_om.transpose() * &solved;
            symmetrize(&mut cond);
            (solved.transpose(), cond)
        };
        Ok(Self {
            mu_obs,
            mu_mis,
            factor_oo,
            regression,
            cond_cov,
        })
    }

    pub fn conditional_mean(&self, x_obs: &DVector<f64>) -> DVector<f64> {
        &self.mu_mis + &self.regression * (x_obs - &self.mu_obs)
    }
}

/// Conditional distribution of the coordinates outside `observed_idx`
/// given `x_obs` on `observed_idx` (0-based, any order is accepted but the
/// result follows ascending missing-coordinate order).
pub fn conditional_normal(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    observed_idx: &[usize],
    x_obs: &DVector<f64>,
) -> Result<ConditionalNormal> {
    let d = mu.len();
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::Contract("sigma does not match mu".into()));
    }
    if observed_idx.len() != x_obs.len() {
        return Err(Error::Contract("x_obs length differs from observed_idx".into()));
    }
    if observed_idx.iter().any(|&i| i >= d) {
        return Err(Error::Contract("observed index out of range".into()));
    }
    let missing: Vec<usize> = (0..d).filter(|i| !observed_idx.contains(i)).collect();
    if missing.is_empty() {
        return Err(Error::Contract(
            "conditional_normal requires at least one missing coordinate".into(),
        ));
    }
    let part = PartitionedNormal::new(mu, sigma, observed_idx, &missing, DEFAULT_RIDGE, "conditional_normal")?;
    Ok(ConditionalNormal {
        mean: part.conditional_mean(x_obs),
        covariance: part.cond_cov,
    })
}
