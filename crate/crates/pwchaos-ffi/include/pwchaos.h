#ifndef PWCHAOS_H
#define PWCHAOS_H

/* Generated by cbindgen from crates/pwchaos-ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum PwcStatus {
  PWC_STATUS_OK = 0,
  PWC_STATUS_NULL_POINTER = 1,
  PWC_STATUS_INVALID_UTF8 = 2,
  PWC_STATUS_CONFIG = 3,
  PWC_STATUS_INVALID_ARGUMENT = 4,
  PWC_STATUS_COMPUTATION = 5,
  PWC_STATUS_HYPOTHESES = 6,
  PWC_STATUS_NO_HOMOCLINIC = 7,
  PWC_STATUS_PANIC = 8,
} PwcStatus;

/**
 * Melnikov integrand variants.
 */
typedef enum PwcMelnikovMode {
  PWC_MELNIKOV_MODE_FULL_TRACE = 0,
  PWC_MELNIKOV_MODE_SIMPLIFIED_TRACE_FREE = 1,
} PwcMelnikovMode;

/**
 * A piecewise-smooth system with its homoclinic loop, when known.
 */
typedef struct PwcSystem PwcSystem;

/**
 * A recorded trajectory.
 */
typedef struct PwcTrajectory PwcTrajectory;

/**
 * One trajectory sample; `region` is `+1` for `G > 0` and `-1` otherwise.
 */
typedef struct PwcSample {
  double t;
  double x;
  double y;
  int region;
} PwcSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty after success).
 * The pointer stays valid until the next call on the same thread.
 */
const char *pwc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pwc_version(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not have been released.
 */
void pwc_string_free(char *s);

/**
 * Parse a system from configuration text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PwcStatus pwc_system_from_config(const char *text, struct PwcSystem **out);

/**
 * Build a named example (`ex1`, `exgen`, ...). `params` is `NULL` or a
 * `key=value;key=value` list.
 *
 * # Safety
 * String arguments must be NUL-terminated (or `NULL` for `params`); `out`
 * must be valid.
 */
enum PwcStatus pwc_system_builtin(const char *name, const char *params, struct PwcSystem **out);

/**
 * Release a system handle.
 *
 * # Safety
 * `sys` must come from this library and not have been released.
 */
void pwc_system_free(struct PwcSystem *sys);

/**
 * `f^region(x, y) + eps·g(t, x, y, eps)`; `region > 0` selects `f⁺`.
 *
 * # Safety
 * `sys` must be a live handle and `out` point to two doubles.
 */
enum PwcStatus pwc_system_field(const struct PwcSystem *sys,
                                int region,
                                double x,
                                double y,
                                double t,
                                double eps,
                                double *out);

/**
 * Spectral report and constants as JSON.
 *
 * # Safety
 * `sys` must be a live handle and `out` valid.
 */
enum PwcStatus pwc_system_analyze_json(const struct PwcSystem *sys, char **out);

/**
 * `M(tau)` and its error estimate.
 *
 * # Safety
 * `sys` must be a live handle; `value` and `error` valid.
 */
enum PwcStatus pwc_melnikov(const struct PwcSystem *sys,
                            enum PwcMelnikovMode mode,
                            double tau,
                            double *value,
                            double *error);

/**
 * `M′(tau)` and its error estimate.
 *
 * # Safety
 * As for [`pwc_melnikov`].
 */
enum PwcStatus pwc_melnikov_deriv(const struct PwcSystem *sys,
                                  enum PwcMelnikovMode mode,
                                  double tau,
                                  double *value,
                                  double *error);

/**
 * Integrate from `(t0, x0, y0)` to `t1` with default tolerances.
 *
 * # Safety
 * `sys` must be a live handle and `out` valid.
 */
enum PwcStatus pwc_integrate(const struct PwcSystem *sys,
                             double t0,
                             double x0,
                             double y0,
                             double t1,
                             double eps,
                             struct PwcTrajectory **out);

/**
 * Number of samples in a trajectory (0 for `NULL`).
 *
 * # Safety
 * `traj` must be `NULL` or a live handle.
 */
size_t pwc_trajectory_len(const struct PwcTrajectory *traj);

/**
 * Number of switching-curve crossings in a trajectory (0 for `NULL`).
 *
 * # Safety
 * `traj` must be `NULL` or a live handle.
 */
size_t pwc_trajectory_event_count(const struct PwcTrajectory *traj);

/**
 * Sample `index` of a trajectory.
 *
 * # Safety
 * `traj` must be a live handle and `out` valid.
 */
enum PwcStatus pwc_trajectory_sample(const struct PwcTrajectory *traj,
                                     size_t index,
                                     struct PwcSample *out);

/**
 * Release a trajectory handle.
 *
 * # Safety
 * `traj` must come from this library and not have been released.
 */
void pwc_trajectory_free(struct PwcTrajectory *traj);

/**
 * Glue an orbit for a centred symbol window over the periodic sequence
 * `T_j = j·gap` (perturbation of period 1) and return the result as JSON.
 * Fails with [`PwcStatus::Hypotheses`] outside the supported scenario.
 *
 * # Safety
 * `sys` must be a live handle, `symbols` NUL-terminated, `out` valid.
 */
enum PwcStatus pwc_shadow_json(const struct PwcSystem *sys,
                               const char *symbols,
                               double eps,
                               double gap,
                               double tol,
                               char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PWCHAOS_H */
