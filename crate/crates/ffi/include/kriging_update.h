/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef KRIGING_UPDATE_H
#define KRIGING_UPDATE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KuKernel {
  KU_KERNEL_BROWNIAN = 0,
  KU_KERNEL_SQUARED_EXPONENTIAL = 1,
  KU_KERNEL_MATERN52 = 2,
} KuKernel;

typedef enum KuStatus {
  KU_STATUS_OK = 0,
  KU_STATUS_NULL_POINTER = 1,
  KU_STATUS_INVALID_ARGUMENT = 2,
  KU_STATUS_DIMENSION_MISMATCH = 3,
  KU_STATUS_NOT_POSITIVE_DEFINITE = 4,
  KU_STATUS_DEGENERATE_NEW_POINT = 5,
  KU_STATUS_PANIC = 6,
} KuStatus;

// Fitted posterior. Opaque to C.
typedef struct KuState KuState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Thread-local description of the last failure, or null. Valid until the
// next failing call on the same thread.
const char *ku_last_error_message(void);

// Fits a posterior to `n` observations (`n` may be 0 for the prior) and
// stores a new handle in `*out`.
//
// # Safety
// `points` must hold `n * dim` doubles and `values` `n` doubles (either may
// be null when `n == 0`); `out` must be writable.
enum KuStatus ku_state_fit(enum KuKernel kernel,
                           double variance,
                           double lengthscale,
                           double jitter,
                           const double *points,
                           const double *values,
                           size_t n,
                           size_t dim,
                           struct KuState **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `state` must be null or a handle not yet freed.
void ku_state_free(struct KuState *state);

// Number of observations the posterior is conditioned on.
//
// # Safety
// `state` must be a live handle; `out` must be writable.
enum KuStatus ku_state_len(const struct KuState *state, size_t *out);

// Posterior mean and variance at `m` query points.
//
// # Safety
// `queries` must hold `m * dim` doubles; `mean` and `variance` must each
// have room for `m` doubles.
enum KuStatus ku_state_predict(const struct KuState *state,
                               const double *queries,
                               size_t m,
                               size_t dim,
                               double *mean,
                               double *variance);

// Posterior covariance between two points.
//
// # Safety
// `x` and `y` must hold `dim` doubles; `out` must be writable.
enum KuStatus ku_state_predict_cov(const struct KuState *state,
                                   const double *x,
                                   const double *y,
                                   size_t dim,
                                   double *out);

// Conditions the state in place on `k >= 1` new observations by extending
// its Cholesky factor. On failure the state is unchanged.
//
// # Safety
// `state` must be a live handle; `points` must hold `k * dim` doubles and
// `values` `k` doubles.
enum KuStatus ku_state_assimilate(struct KuState *state,
                                  const double *points,
                                  const double *values,
                                  size_t k,
                                  size_t dim);

// Evaluates the batch update for `k` new observations at `m` queries
// without modifying the state. `naive_variance` may be null; when given it
// receives the diagonal-only variance, which is wrong for `k > 1`.
//
// # Safety
// `new_points` must hold `k * dim` doubles, `new_values` `k` doubles and
// `queries` `m * dim` doubles. `mean`, `variance` and a non-null
// `naive_variance` must each have room for `m` doubles.
enum KuStatus ku_update_predict(const struct KuState *state,
                                const double *new_points,
                                const double *new_values,
                                size_t k,
                                const double *queries,
                                size_t m,
                                size_t dim,
                                double *mean,
                                double *variance,
                                double *naive_variance);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KRIGING_UPDATE_H */
