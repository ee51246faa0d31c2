#ifndef OPTIDESIGN_H
#define OPTIDESIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum OdStatus {
  OD_STATUS_OK = 0,
  OD_STATUS_NULL_POINTER = 1,
  OD_STATUS_INVALID_ARGUMENT = 2,
  OD_STATUS_DIMENSION = 3,
  OD_STATUS_SINGULAR = 4,
  OD_STATUS_NOT_CONVERGED = 5,
  OD_STATUS_UNKNOWN_MODEL = 6,
  OD_STATUS_FIXTURE = 7,
  OD_STATUS_IO = 8,
  OD_STATUS_PARSE = 9,
  OD_STATUS_EVALUATION = 10,
  OD_STATUS_SIMULATION_ABORTED = 11,
  OD_STATUS_UNSUPPORTED = 12,
  OD_STATUS_BUFFER_TOO_SMALL = 13,
  OD_STATUS_PANIC = 99,
} OdStatus;

// Design criterion selector for `criterion` arguments.
typedef enum OdCriterion {
  OD_CRITERION_D = 0,
  OD_CRITERION_DP = 1,
} OdCriterion;

// Residual handling selector for `residual_mode` arguments.
typedef enum OdResidualMode {
  OD_RESIDUAL_MODE_OBSERVED = 0,
  OD_RESIDUAL_MODE_ZERO = 1,
} OdResidualMode;

// Efficiency interpretation selector for `mode` arguments.
typedef enum OdEfficiencyMode {
  OD_EFFICIENCY_MODE_LITERAL = 0,
  OD_EFFICIENCY_MODE_SAME_MATRIX = 1,
} OdEfficiencyMode;

// Opaque dataset (design rows with optional responses).
typedef struct OdDataset OdDataset;

// Opaque design search outcome.
typedef struct OdDesign OdDesign;

// Opaque least-squares fit.
typedef struct OdFit OdFit;

// Opaque regression model.
typedef struct OdModel OdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *od_version(void);

// Length in bytes (without the terminator) of the calling thread's last
// error message; 0 when the last call succeeded.
size_t od_last_error_length(void);

// Copies the last error message, NUL-terminated and truncated to `cap`
// bytes. Returns the number of bytes written excluding the terminator.
//
// # Safety
// `buf` must be valid for `cap` bytes or null when `cap` is 0.
size_t od_last_error_message(char *buf, size_t cap);

// Looks up a zoo model: `"michaelis-menten"` or `"hougen-watson"`.
//
// # Safety
// `name` must be a NUL-terminated string; `out` a valid pointer.
enum OdStatus od_model_from_zoo(const char *name, struct OdModel **out);

// # Safety
// `model` must come from `od_model_from_zoo` and not be used afterwards.
void od_model_free(struct OdModel *model);

// Number of parameters, or 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t od_model_n_params(const struct OdModel *model);

// Number of design variables, or 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t od_model_n_vars(const struct OdModel *model);

// Mean response at one design point.
//
// # Safety
// `x` holds `n_vars` values, `theta` holds `n_params`.
enum OdStatus od_model_eval(const struct OdModel *model,
                            const double *x,
                            const double *theta,
                            double *out);

// Dataset from `n` rows of `m` design variables (row-major `x`) and
// optional responses `y` (null for a design without responses).
//
// # Safety
// `x` holds `n * m` values; `y` holds `n` values or is null.
enum OdStatus od_dataset_new(size_t n,
                             size_t m,
                             const double *x,
                             const double *y,
                             struct OdDataset **out);

// Reads a CSV with header `x1,...,xm[,y]`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid pointer.
enum OdStatus od_dataset_from_csv(const char *path, struct OdDataset **out);

// # Safety
// `data` must come from an `od_dataset_*` constructor and not be used afterwards.
void od_dataset_free(struct OdDataset *data);

// Number of rows, or 0 for a null handle.
//
// # Safety
// `data` must be a live handle or null.
size_t od_dataset_n(const struct OdDataset *data);

// Least-squares fit from `theta0` (`n_params` values).
//
// # Safety
// Handles must be live; `theta0` holds `n_params` values.
enum OdStatus od_fit(const struct OdModel *model,
                     const struct OdDataset *data,
                     const double *theta0,
                     struct OdFit **out);

// # Safety
// `fit` must come from `od_fit` and not be used afterwards.
void od_fit_free(struct OdFit *fit);

// Parameter estimates.
//
// # Safety
// `out` valid for `cap` doubles; `len_out` valid or null.
enum OdStatus od_fit_estimates(const struct OdFit *fit, double *out, size_t cap, size_t *len_out);

// Linear-approximation standard errors; `OD_STATUS_SINGULAR` when the
// information matrix is singular at the estimate.
//
// # Safety
// As [`od_fit_estimates`].
enum OdStatus od_fit_std_errors(const struct OdFit *fit, double *out, size_t cap, size_t *len_out);

// Full k x k correlation matrix, row-major.
//
// # Safety
// As [`od_fit_estimates`].
enum OdStatus od_fit_correlation(const struct OdFit *fit, double *out, size_t cap, size_t *len_out);

// Residual sum of squares.
//
// # Safety
// `fit` live; `out` valid.
enum OdStatus od_fit_sse(const struct OdFit *fit, double *out);

// Local sensitivities V (n x k, row-major) at `theta`.
//
// # Safety
// Handles live; `theta` holds `n_params` values; `out` valid for `cap`.
enum OdStatus od_jacobian(const struct OdModel *model,
                          const struct OdDataset *data,
                          const double *theta,
                          double *out,
                          size_t cap,
                          size_t *len_out);

// Profile-based sensitivities P (n x k, row-major) at `theta`.
// `residual_mode` is an [`OdResidualMode`] value.
//
// # Safety
// As [`od_jacobian`].
enum OdStatus od_profile_matrix(const struct OdModel *model,
                                const struct OdDataset *data,
                                const double *theta,
                                int32_t residual_mode,
                                double *out,
                                size_t cap,
                                size_t *len_out);

// `ln det(V'V)` (D) or `ln det(P'P)` (D_P, zero residuals) of the design
// in `data` at `theta`; `-inf` when singular.
//
// # Safety
// Handles live; `theta` holds `n_params` values; `logdet` valid.
enum OdStatus od_criterion(const struct OdModel *model,
                           const struct OdDataset *data,
                           const double *theta,
                           int32_t criterion,
                           double *logdet);

// Initial `n_support`-point design at `theta0` (zero residuals).
// Null `lower`/`upper` select the model's default region; `grid_points`
// 0 selects the default resolution.
//
// # Safety
// `model` live; `theta0` holds `n_params` values; bounds hold `n_vars`
// values each or are both null; `out` valid.
enum OdStatus od_design_initial(const struct OdModel *model,
                                const double *theta0,
                                size_t n_support,
                                const double *lower,
                                const double *upper,
                                int32_t criterion,
                                size_t grid_points,
                                struct OdDesign **out);

// Best additional point for the runs in `data` given their fit.
//
// # Safety
// As [`od_design_initial`], with `data` and `fit` live handles.
enum OdStatus od_design_sequential(const struct OdModel *model,
                                   const struct OdDataset *data,
                                   const struct OdFit *fit,
                                   const double *lower,
                                   const double *upper,
                                   int32_t criterion,
                                   size_t grid_points,
                                   struct OdDesign **out);

// # Safety
// `design` must come from an `od_design_*` function and not be used afterwards.
void od_design_free(struct OdDesign *design);

// Number of support points (1 for sequential designs), 0 for null.
//
// # Safety
// `design` live or null.
size_t od_design_n_points(const struct OdDesign *design);

// Support points, row-major (`n_points x n_vars`).
//
// # Safety
// As [`od_fit_estimates`].
enum OdStatus od_design_points(const struct OdDesign *design,
                               double *out,
                               size_t cap,
                               size_t *len_out);

// Criterion log-determinant at the returned design.
//
// # Safety
// `design` live; `out` valid.
enum OdStatus od_design_logdet(const struct OdDesign *design, double *out);

// Full outcome as JSON, NUL-terminated. `*len_out` receives the length
// without the terminator; `cap` must exceed it.
//
// # Safety
// `buf` valid for `cap` bytes; `len_out` valid or null.
enum OdStatus od_design_to_json(const struct OdDesign *design,
                                char *buf,
                                size_t cap,
                                size_t *len_out);

// `exp((numerator - denominator) / k) * 100`. `mode` is an
// [`OdEfficiencyMode`] value, recorded for interpretation only.
//
// # Safety
// `out` valid.
enum OdStatus od_d_efficiency(double numerator_logdet,
                              double denominator_logdet,
                              size_t k,
                              int32_t mode,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPTIDESIGN_H */
