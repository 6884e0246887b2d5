//! C ABI over the `mcnm` crate.
//!
//! Datasets and fits are opaque handles created by `mcnm_*_new`/`mcnm_fit`
//! and released with the matching `_free` function. Every fallible call
//! returns an `McnmStatus`; on failure `mcnm_last_error_message` describes
//! the most recent error on the calling thread. Arrays are copied out into
//! caller-owned buffers whose length must match exactly; matrices are
//! row-major.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mcnm::config::{CmRule, FitConfig};
use mcnm::data::{load_dataset, Dataset, DEFAULT_MISSING_TOKEN};
use mcnm::model::{FittedModel, ModelKind};
use mcnm::result::FitResult;
use mcnm::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McnmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SingularCovariance = 3,
    Domain = 4,
    Contract = 5,
    Parse = 6,
    Validation = 7,
    EmptyComponent = 8,
    DegenerateRow = 9,
    FitFailure = 10,
    Config = 11,
    Io = 12,
    Document = 13,
    Panic = 14,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McnmModelKind {
    Mcnm = 0,
    Tmix = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McnmCmRule {
    Printed = 0,
    Exact = 1,
}

/// Fit settings; obtain defaults from `mcnm_fit_options_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct McnmFitOptions {
    pub g: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub n_starts: usize,
    pub seed: u64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub eta_min: f64,
    pub ridge: f64,
    /// Degrees of freedom for the t mixture; zero or negative means estimate.
    pub nu_fixed: f64,
    pub cm_rule: McnmCmRule,
}

/// Opaque dataset handle.
pub struct McnmDataset(Dataset);

/// Opaque fit handle.
pub struct McnmFit {
    result: FitResult,
    config: FitConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(e: &Error) -> McnmStatus {
    match e {
        Error::SingularCovariance { .. } => McnmStatus::SingularCovariance,
        Error::Domain(_) => McnmStatus::Domain,
        Error::Contract(_) => McnmStatus::Contract,
        Error::Parse { .. } => McnmStatus::Parse,
        Error::Validation(_) => McnmStatus::Validation,
        Error::EmptyComponent { .. } => McnmStatus::EmptyComponent,
        Error::DegenerateRow { .. } => McnmStatus::DegenerateRow,
        Error::FitFailure { .. } => McnmStatus::FitFailure,
        Error::Config(_) => McnmStatus::Config,
        Error::Io { .. } => McnmStatus::Io,
        Error::Document(_) => McnmStatus::Document,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> McnmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            McnmStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_last_error(&format!("{what} is null"));
            McnmStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_last_error(&msg);
            McnmStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            McnmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, expected: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    if len != expected {
        return Err(Fail::Arg(format!("{what} has length {len}, expected {expected}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn in_slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mcnm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn mcnm_fit_options_default() -> McnmFitOptions {
    let c = FitConfig::default();
    McnmFitOptions {
        g: c.g,
        tol: c.tol,
        max_iter: c.max_iter,
        n_starts: c.n_starts,
        seed: c.seed,
        alpha_min: c.alpha_min,
        alpha_max: c.alpha_max,
        eta_min: c.eta_min,
        ridge: c.ridge,
        nu_fixed: 0.0,
        cm_rule: McnmCmRule::Printed,
    }
}

fn to_config(o: &McnmFitOptions) -> FitConfig {
    FitConfig {
        g: o.g,
        tol: o.tol,
        max_iter: o.max_iter,
        n_starts: o.n_starts,
        seed: o.seed,
        alpha_min: o.alpha_min,
        alpha_max: o.alpha_max,
        eta_min: o.eta_min,
        ridge: o.ridge,
        nu_fixed: (o.nu_fixed > 0.0).then_some(o.nu_fixed),
        cm_rule: match o.cm_rule {
            McnmCmRule::Printed => CmRule::Printed,
            McnmCmRule::Exact => CmRule::Exact,
        },
        ..FitConfig::default()
    }
}

/// Builds a dataset from `n * d` row-major values. With a null `mask`, NaN
/// cells are missing; otherwise a nonzero mask byte marks an observed cell.
#[no_mangle]
pub unsafe extern "C" fn mcnm_dataset_new(
    values: *const f64,
    mask: *const u8,
    n: usize,
    d: usize,
    out: *mut *mut McnmDataset,
) -> McnmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let len = n.checked_mul(d).ok_or_else(|| Fail::Arg("n * d overflows".into()))?;
        let vals = in_slice(values, len, "values")?.to_vec();
        let mask = if mask.is_null() {
            vals.iter().map(|v| !v.is_nan()).collect()
        } else {
            in_slice(mask, len, "mask")?.iter().map(|&m| m != 0).collect()
        };
        let ds = Dataset::new(vals, mask, n, d)?;
        *out = Box::into_raw(Box::new(McnmDataset(ds)));
        Ok(())
    })
}

/// Loads a delimited text file with a header row. A null `missing_token`
/// means "NA".
#[no_mangle]
pub unsafe extern "C" fn mcnm_dataset_load(
    path: *const c_char,
    missing_token: *const c_char,
    out: *mut *mut McnmDataset,
) -> McnmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let path = c_str(path, "path")?;
        let token = if missing_token.is_null() {
            DEFAULT_MISSING_TOKEN
        } else {
            c_str(missing_token, "missing_token")?
        };
        let ds = load_dataset(Path::new(path), token)?;
        *out = Box::into_raw(Box::new(McnmDataset(ds)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mcnm_dataset_n(ds: *const McnmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n())
}

#[no_mangle]
pub unsafe extern "C" fn mcnm_dataset_d(ds: *const McnmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.d())
}

#[no_mangle]
pub unsafe extern "C" fn mcnm_dataset_free(ds: *mut McnmDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fits a mixture. A null `options` uses the defaults.
#[no_mangle]
pub unsafe extern "C" fn mcnm_fit(
    ds: *const McnmDataset,
    kind: McnmModelKind,
    options: *const McnmFitOptions,
    out: *mut *mut McnmFit,
) -> McnmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let ds = deref(ds, "dataset")?;
        let config = match options.as_ref() {
            Some(o) => to_config(o),
            None => FitConfig::default(),
        };
        let kind = match kind {
            McnmModelKind::Mcnm => ModelKind::Mcnm,
            McnmModelKind::Tmix => ModelKind::Tmix,
        };
        let result = mcnm::fit(&ds.0, kind, &config)?;
        *out = Box::into_raw(Box::new(McnmFit { result, config }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_free(fit: *mut McnmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Rows, columns and components of a fit.
#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_shape(fit: *const McnmFit, n: *mut usize, d: *mut usize, g: *mut usize) -> McnmStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        if n.is_null() || d.is_null() || g.is_null() {
            return Err(Fail::Null("shape output"));
        }
        *n = f.result.labels.len();
        *d = f.result.model.d();
        *g = f.result.model.g();
        Ok(())
    })
}

/// Final observed-data log-likelihood; NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_loglik(fit: *const McnmFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.result.loglik)
}

#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_bic(fit: *const McnmFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.result.bic)
}

#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_n_iter(fit: *const McnmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.result.n_iter)
}

/// 1 when the fit converged, 0 otherwise (including a null handle).
#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_converged(fit: *const McnmFit) -> u8 {
    fit.as_ref().map_or(0, |f| u8::from(f.result.converged))
}

#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_labels(fit: *const McnmFit, out: *mut usize, len: usize) -> McnmStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        out_slice(out, len, f.result.labels.len(), "labels")?.copy_from_slice(&f.result.labels);
        Ok(())
    })
}

/// Outlier flags (1 = outlier). The t mixture reports the distance-based
/// call at the configured chi-square quantile.
#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_outliers(fit: *const McnmFit, out: *mut u8, len: usize) -> McnmStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        let flags = match f.result.model.kind() {
            ModelKind::Mcnm => f.result.outlier_flag.clone(),
            ModelKind::Tmix => mcnm::tmix::distance_outliers(&f.result, f.config.outlier_quantile)?,
        };
        let dst = out_slice(out, len, flags.len(), "outliers")?;
        for (d, s) in dst.iter_mut().zip(flags) {
            *d = u8::from(s);
        }
        Ok(())
    })
}

/// Input data with missing cells filled, `n * d` row-major.
#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_imputed(fit: *const McnmFit, out: *mut f64, len: usize) -> McnmStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        let ds = &f.result.imputed;
        let dst = out_slice(out, len, ds.n() * ds.d(), "imputed")?;
        for i in 0..ds.n() {
            dst[i * ds.d()..(i + 1) * ds.d()].copy_from_slice(ds.row(i));
        }
        Ok(())
    })
}

/// Posterior memberships, `n * g` row-major.
#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_posterior(fit: *const McnmFit, out: *mut f64, len: usize) -> McnmStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        let z = f.result.z_tilde();
        let dst = out_slice(out, len, z.nrows() * z.ncols(), "posterior")?;
        for i in 0..z.nrows() {
            for g in 0..z.ncols() {
                dst[i * z.ncols() + g] = z[(i, g)];
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_pi(fit: *const McnmFit, out: *mut f64, len: usize) -> McnmStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        let pi = f.result.model.pi();
        out_slice(out, len, pi.len(), "pi")?.copy_from_slice(pi);
        Ok(())
    })
}

fn component(f: &McnmFit, g: usize) -> Result<(), Fail> {
    if g >= f.result.model.g() {
        return Err(Fail::Arg(format!("component {g} out of range")));
    }
    Ok(())
}

#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_mu(fit: *const McnmFit, g: usize, out: *mut f64, len: usize) -> McnmStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        component(f, g)?;
        let mu = f.result.model.location(g).0;
        out_slice(out, len, mu.len(), "mu")?.copy_from_slice(mu.as_slice());
        Ok(())
    })
}

/// Scale matrix of component `g`, `d * d` row-major.
#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_sigma(fit: *const McnmFit, g: usize, out: *mut f64, len: usize) -> McnmStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        component(f, g)?;
        let s = f.result.model.location(g).1;
        let d = s.nrows();
        let dst = out_slice(out, len, d * d, "sigma")?;
        for r in 0..d {
            for c in 0..d {
                dst[r * d + c] = s[(r, c)];
            }
        }
        Ok(())
    })
}

unsafe fn scalar(
    fit: *const McnmFit,
    g: usize,
    out: *mut f64,
    name: &'static str,
    pick: impl Fn(&FittedModel, usize) -> Option<f64>,
) -> McnmStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        component(f, g)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = pick(&f.result.model, g)
            .ok_or_else(|| Fail::Arg(format!("{name} is not a parameter of a {} fit", f.result.model.kind())))?;
        Ok(())
    })
}

/// Proportion of good points of component `g` (contaminated-normal fits).
#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_alpha(fit: *const McnmFit, g: usize, out: *mut f64) -> McnmStatus {
    scalar(fit, g, out, "alpha", |m, g| match m {
        FittedModel::Mcnm(m) => Some(m.components[g].alpha),
        FittedModel::Tmix(_) => None,
    })
}

/// Degree of contamination of component `g` (contaminated-normal fits).
#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_eta(fit: *const McnmFit, g: usize, out: *mut f64) -> McnmStatus {
    scalar(fit, g, out, "eta", |m, g| match m {
        FittedModel::Mcnm(m) => Some(m.components[g].eta),
        FittedModel::Tmix(_) => None,
    })
}

/// Degrees of freedom of component `g` (t fits).
#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_nu(fit: *const McnmFit, g: usize, out: *mut f64) -> McnmStatus {
    scalar(fit, g, out, "nu", |m, g| match m {
        FittedModel::Tmix(m) => Some(m.components[g].nu),
        FittedModel::Mcnm(_) => None,
    })
}

/// Writes the JSON result document.
#[no_mangle]
pub unsafe extern "C" fn mcnm_fit_write_json(fit: *const McnmFit, path: *const c_char) -> McnmStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        let path = c_str(path, "path")?;
        f.result.to_document(&f.config).write(Path::new(path))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mcnm_adjusted_rand_index(a: *const usize, b: *const usize, n: usize, out: *mut f64) -> McnmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let a = in_slice(a, n, "a")?;
        let b = in_slice(b, n, "b")?;
        *out = mcnm::adjusted_rand_index(a, b)?;
        Ok(())
    })
}

/// True and false positive rates; NaN where a rate is undefined.
#[no_mangle]
pub unsafe extern "C" fn mcnm_outlier_rates(
    predicted: *const u8,
    truth: *const u8,
    n: usize,
    tpr: *mut f64,
    fpr: *mut f64,
) -> McnmStatus {
    guard(|| {
        if tpr.is_null() || fpr.is_null() {
            return Err(Fail::Null("rate output"));
        }
        let p: Vec<bool> = in_slice(predicted, n, "predicted")?.iter().map(|&v| v != 0).collect();
        let t: Vec<bool> = in_slice(truth, n, "truth")?.iter().map(|&v| v != 0).collect();
        let r = mcnm::outlier_rates(&p, &t)?;
        *tpr = r.tpr.unwrap_or(f64::NAN);
        *fpr = r.fpr.unwrap_or(f64::NAN);
        Ok(())
    })
}
