#ifndef NFSIC_H
#define NFSIC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum {
  NFSIC_STATUS_OK = 0,
  NFSIC_STATUS_NULL_POINTER = 1,
  NFSIC_STATUS_INVALID_INPUT = 2,
  NFSIC_STATUS_DIMENSION_MISMATCH = 3,
  NFSIC_STATUS_DEGENERATE = 4,
  NFSIC_STATUS_SINGULAR_COVARIANCE = 5,
  NFSIC_STATUS_DOMAIN = 6,
  NFSIC_STATUS_PANIC = 7,
  NFSIC_STATUS_OTHER = 8,
} NfsicStatus;

/**
 * Opaque paired sample. Create with [`nfsic_sample_new`], release with
 * [`nfsic_sample_free`].
 */
typedef struct NfsicSample NfsicSample;

/**
 * Decision of a test.
 */
typedef struct {
  double statistic;
  double threshold;
  double p_value;
  bool reject;
  /**
   * Squared kernel widths used; tuned values for the adaptive test.
   */
  double sigma2_x;
  double sigma2_y;
} NfsicOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *nfsic_version(void);

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next library call on the same thread.
 */
const char *nfsic_last_error_message(void);

/**
 * Copies `x` (`n x dx`) and `y` (`n x dy`) into a new sample handle.
 *
 * # Safety
 * `x` and `y` must hold `n * dx` and `n * dy` doubles; `out` must be writable.
 */
NfsicStatus nfsic_sample_new(const double *x,
                             size_t n,
                             size_t dx,
                             const double *y,
                             size_t dy,
                             NfsicSample **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `sample` must come from [`nfsic_sample_new`] and not be freed twice.
 */
void nfsic_sample_free(NfsicSample *sample);

/**
 * Number of rows; 0 for a null handle.
 *
 * # Safety
 * `sample` must be null or a live handle.
 */
size_t nfsic_sample_n(const NfsicSample *sample);

/**
 * Median pairwise Euclidean distance of the rows of `points` (`n x d`).
 *
 * # Safety
 * `points` must hold `n * d` doubles; `out` must be writable.
 */
NfsicStatus nfsic_median_heuristic(const double *points, size_t n, size_t d, double *out);

/**
 * Normalized statistic with Gaussian widths `sigma2_x`, `sigma2_y` and `j`
 * locations `v` (`j x dx`), `w` (`j x dy`).
 *
 * # Safety
 * Pointers must be valid for the sizes implied by the sample and `j`.
 */
NfsicStatus nfsic_statistic(const NfsicSample *sample,
                            double sigma2_x,
                            double sigma2_y,
                            const double *v,
                            const double *w,
                            size_t j,
                            double gamma,
                            double *out);

/**
 * Test with fixed parameters and the asymptotic chi-squared threshold.
 *
 * # Safety
 * As for [`nfsic_statistic`]; `out` must be writable.
 */
NfsicStatus nfsic_test_chi2(const NfsicSample *sample,
                            double sigma2_x,
                            double sigma2_y,
                            const double *v,
                            const double *w,
                            size_t j,
                            double gamma,
                            double alpha,
                            NfsicOutcome *out);

/**
 * Tunes widths and `j` locations on half the sample and tests on the rest,
 * with default settings and the given seed.
 *
 * # Safety
 * `sample` must be a live handle; `out` must be writable.
 */
NfsicStatus nfsic_adaptive_test(const NfsicSample *sample,
                                size_t j,
                                double alpha,
                                uint64_t seed,
                                NfsicOutcome *out);

/**
 * Biased quadratic-time HSIC estimate.
 *
 * # Safety
 * `sample` must be a live handle; `out` must be writable.
 */
NfsicStatus nfsic_hsic_statistic(const NfsicSample *sample,
                                 double sigma2_x,
                                 double sigma2_y,
                                 double *out);

/**
 * `prob`-quantile of the chi-squared distribution with `dof` degrees of freedom.
 *
 * # Safety
 * `out` must be writable.
 */
NfsicStatus nfsic_chi2_quantile(size_t dof, double prob, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NFSIC_H */
