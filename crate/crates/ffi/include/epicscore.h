#ifndef EPICSCORE_H
#define EPICSCORE_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum EpicPredictiveKind {
  EPIC_PREDICTIVE_KIND_GP_EXACT = 0,
  EPIC_PREDICTIVE_KIND_MDN_DROPOUT = 1,
  EPIC_PREDICTIVE_KIND_BART_LITE = 2,
  EPIC_PREDICTIVE_KIND_KNN_EMPIRICAL = 3,
} EpicPredictiveKind;

/**
 * Result code of every call.
 */
typedef enum EpicStatus {
  EPIC_STATUS_OK = 0,
  EPIC_STATUS_NULL_POINTER = 1,
  EPIC_STATUS_INVALID_ARGUMENT = 2,
  EPIC_STATUS_INVALID_ALPHA = 3,
  EPIC_STATUS_EMPTY_CALIBRATION = 4,
  EPIC_STATUS_NON_FINITE = 5,
  EPIC_STATUS_INSUFFICIENT_DATA = 6,
  EPIC_STATUS_NUMERICAL = 7,
  EPIC_STATUS_IO = 8,
  EPIC_STATUS_MODEL_FORMAT = 9,
  EPIC_STATUS_PANIC = 10,
} EpicStatus;

/**
 * Fitted predictive model of a conformal score.
 */
typedef struct EpicModel EpicModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *epic_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *epic_version(void);

/**
 * Conformal threshold: the `ceil((n + 1)(1 - alpha))`-th smallest score, or
 * `+inf` when that rank exceeds `n`.
 */
enum EpicStatus epic_conformal_quantile(const double *scores, size_t n, double alpha, double *out);

/**
 * Marginal coverage bounds `[1 - alpha, 1 - alpha + 1/(1 + n2)]`.
 */
enum EpicStatus epic_coverage_bounds(size_t n2, double alpha, double *lower, double *upper);

/**
 * Fit a predictive model of scores `s` given row-major features `x` (`n` rows,
 * `p` columns) with default settings. On success `*out` owns a new handle.
 */
enum EpicStatus epic_model_fit(enum EpicPredictiveKind kind,
                               const double *x,
                               size_t n,
                               size_t p,
                               const double *s,
                               uint64_t seed,
                               struct EpicModel **out);

/**
 * Release a handle from [`epic_model_fit`] or [`epic_model_load`]. NULL is ignored.
 */
void epic_model_free(struct EpicModel *model);

enum EpicStatus epic_model_save(const struct EpicModel *model, const char *file);

enum EpicStatus epic_model_load(const char *file, struct EpicModel **out);

/**
 * `F(s | x, D)`.
 */
enum EpicStatus epic_model_cdf(const struct EpicModel *model,
                               const double *x,
                               size_t p,
                               double s,
                               double *out);

/**
 * Smallest `s` with `F(s | x, D) >= t`.
 */
enum EpicStatus epic_model_invert(const struct EpicModel *model,
                                  const double *x,
                                  size_t p,
                                  double t,
                                  double *out);

/**
 * Transformed scores `s'_i = F(s_i | x_i, D)` for `n` rows of `x`.
 */
enum EpicStatus epic_transform_scores(const struct EpicModel *model,
                                      const double *x,
                                      size_t n,
                                      size_t p,
                                      const double *s,
                                      double *out);

/**
 * Band `g +- max(0, F^-1(t | x))` for a residual score. An infinite `t`
 * threshold (or `t >= 1`) gives the whole line.
 */
enum EpicStatus epic_interval_residual(const struct EpicModel *model,
                                       const double *x,
                                       size_t p,
                                       double g,
                                       double t,
                                       double *lo,
                                       double *hi);

/**
 * Band `[q_lo - F^-1(t | x), q_hi + F^-1(t | x)]` for the CQR score.
 */
enum EpicStatus epic_interval_cqr(const struct EpicModel *model,
                                  const double *x,
                                  size_t p,
                                  double q_lo,
                                  double q_hi,
                                  double t,
                                  double *lo,
                                  double *hi);

/**
 * Band for a Gaussian predictive `N(mu, sigma^2)` of the residual score.
 */
enum EpicStatus epic_interval_normal(double g,
                                     double mu,
                                     double sigma,
                                     double t,
                                     double *lo,
                                     double *hi);

/**
 * Label set `{y : s'(y) <= t}` where `s'(y)` sums `predictive` over labels whose
 * base probability is at least `base[y]`. `in_set` receives 0/1 flags,
 * `s_prime` (optional, may be NULL) the transformed scores, and `set_size` the count.
 */
enum EpicStatus epic_class_set(const double *predictive,
                               const double *base,
                               size_t k,
                               double t,
                               uint8_t *in_set,
                               double *s_prime,
                               size_t *set_size);

/**
 * Mean interval score over `n` bands.
 */
enum EpicStatus epic_aisl(const double *lo,
                          const double *hi,
                          const double *y,
                          size_t n,
                          double alpha,
                          double *out);

/**
 * Fraction of `y` inside `[lo, hi]`.
 */
enum EpicStatus epic_marginal_coverage(const double *lo,
                                       const double *hi,
                                       const double *y,
                                       size_t n,
                                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EPICSCORE_H */
