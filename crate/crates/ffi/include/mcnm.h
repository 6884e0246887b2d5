#ifndef MCNM_H
#define MCNM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum McnmCmRule {
  MCNM_CM_RULE_PRINTED = 0,
  MCNM_CM_RULE_EXACT = 1,
} McnmCmRule;

/**
 * Result code of every fallible call.
 */
typedef enum McnmStatus {
  MCNM_STATUS_OK = 0,
  MCNM_STATUS_NULL_POINTER = 1,
  MCNM_STATUS_INVALID_ARGUMENT = 2,
  MCNM_STATUS_SINGULAR_COVARIANCE = 3,
  MCNM_STATUS_DOMAIN = 4,
  MCNM_STATUS_CONTRACT = 5,
  MCNM_STATUS_PARSE = 6,
  MCNM_STATUS_VALIDATION = 7,
  MCNM_STATUS_EMPTY_COMPONENT = 8,
  MCNM_STATUS_DEGENERATE_ROW = 9,
  MCNM_STATUS_FIT_FAILURE = 10,
  MCNM_STATUS_CONFIG = 11,
  MCNM_STATUS_IO = 12,
  MCNM_STATUS_DOCUMENT = 13,
  MCNM_STATUS_PANIC = 14,
} McnmStatus;

typedef enum McnmModelKind {
  MCNM_MODEL_KIND_MCNM = 0,
  MCNM_MODEL_KIND_TMIX = 1,
} McnmModelKind;

/**
 * Opaque dataset handle.
 */
typedef struct McnmDataset McnmDataset;

/**
 * Opaque fit handle.
 */
typedef struct McnmFit McnmFit;

/**
 * Fit settings; obtain defaults from `mcnm_fit_options_default`.
 */
typedef struct McnmFitOptions {
  size_t g;
  double tol;
  size_t max_iter;
  size_t n_starts;
  uint64_t seed;
  double alpha_min;
  double alpha_max;
  double eta_min;
  double ridge;
  /**
   * Degrees of freedom for the t mixture; zero or negative means estimate.
   */
  double nu_fixed;
  enum McnmCmRule cm_rule;
} McnmFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *mcnm_last_error_message(void);

struct McnmFitOptions mcnm_fit_options_default(void);

/**
 * Builds a dataset from `n * d` row-major values. With a null `mask`, NaN
 * cells are missing; otherwise a nonzero mask byte marks an observed cell.
 */
enum McnmStatus mcnm_dataset_new(const double *values,
                                 const uint8_t *mask,
                                 size_t n,
                                 size_t d,
                                 struct McnmDataset **out);

/**
 * Loads a delimited text file with a header row. A null `missing_token`
 * means "NA".
 */
enum McnmStatus mcnm_dataset_load(const char *path,
                                  const char *missing_token,
                                  struct McnmDataset **out);

size_t mcnm_dataset_n(const struct McnmDataset *ds);

size_t mcnm_dataset_d(const struct McnmDataset *ds);

void mcnm_dataset_free(struct McnmDataset *ds);

/**
 * Fits a mixture. A null `options` uses the defaults.
 */
enum McnmStatus mcnm_fit(const struct McnmDataset *ds,
                         enum McnmModelKind kind,
                         const struct McnmFitOptions *options,
                         struct McnmFit **out);

void mcnm_fit_free(struct McnmFit *fit);

/**
 * Rows, columns and components of a fit.
 */
enum McnmStatus mcnm_fit_shape(const struct McnmFit *fit, size_t *n, size_t *d, size_t *g);

/**
 * Final observed-data log-likelihood; NaN for a null handle.
 */
double mcnm_fit_loglik(const struct McnmFit *fit);

double mcnm_fit_bic(const struct McnmFit *fit);

size_t mcnm_fit_n_iter(const struct McnmFit *fit);

/**
 * 1 when the fit converged, 0 otherwise (including a null handle).
 */
uint8_t mcnm_fit_converged(const struct McnmFit *fit);

enum McnmStatus mcnm_fit_labels(const struct McnmFit *fit, size_t *out, size_t len);

/**
 * Outlier flags (1 = outlier). The t mixture reports the distance-based
 * call at the configured chi-square quantile.
 */
enum McnmStatus mcnm_fit_outliers(const struct McnmFit *fit, uint8_t *out, size_t len);

/**
 * Input data with missing cells filled, `n * d` row-major.
 */
enum McnmStatus mcnm_fit_imputed(const struct McnmFit *fit, double *out, size_t len);

/**
 * Posterior memberships, `n * g` row-major.
 */
enum McnmStatus mcnm_fit_posterior(const struct McnmFit *fit, double *out, size_t len);

enum McnmStatus mcnm_fit_pi(const struct McnmFit *fit, double *out, size_t len);

enum McnmStatus mcnm_fit_mu(const struct McnmFit *fit, size_t g, double *out, size_t len);

/**
 * Scale matrix of component `g`, `d * d` row-major.
 */
enum McnmStatus mcnm_fit_sigma(const struct McnmFit *fit, size_t g, double *out, size_t len);

/**
 * Proportion of good points of component `g` (contaminated-normal fits).
 */
enum McnmStatus mcnm_fit_alpha(const struct McnmFit *fit, size_t g, double *out);

/**
 * Degree of contamination of component `g` (contaminated-normal fits).
 */
enum McnmStatus mcnm_fit_eta(const struct McnmFit *fit, size_t g, double *out);

/**
 * Degrees of freedom of component `g` (t fits).
 */
enum McnmStatus mcnm_fit_nu(const struct McnmFit *fit, size_t g, double *out);

/**
 * Writes the JSON result document.
 */
enum McnmStatus mcnm_fit_write_json(const struct McnmFit *fit, const char *path);

enum McnmStatus mcnm_adjusted_rand_index(const size_t *a, const size_t *b, size_t n, double *out);

/**
 * True and false positive rates; NaN where a rate is undefined.
 */
enum McnmStatus mcnm_outlier_rates(const uint8_t *predicted,
                                   const uint8_t *truth,
                                   size_t n,
                                   double *tpr,
                                   double *fpr);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCNM_H */
