#ifndef M3COND_H
#define M3COND_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum M3Status {
  M3_STATUS_OK = 0,
  M3_STATUS_NULL_POINTER = 1,
  M3_STATUS_INVALID_ARGUMENT = 2,
  M3_STATUS_NORMALIZATION = 3,
  M3_STATUS_INVALID_OBSERVATIONS = 4,
  M3_STATUS_TANGENCY = 5,
  M3_STATUS_INTERVAL_INTERSECTION = 6,
  M3_STATUS_CONFLICT = 7,
  M3_STATUS_INFEASIBLE = 8,
  M3_STATUS_TOO_MANY_FREE_INDICES = 9,
  M3_STATUS_EMPTY_REGION = 10,
  M3_STATUS_SIMULATION = 11,
  M3_STATUS_SINGULAR_COVARIANCE = 12,
  M3_STATUS_OTHER = 98,
  M3_STATUS_PANIC = 99,
} M3Status;

/**
 * Conditioning data with its scenario table.
 */
typedef struct M3Conditioner M3Conditioner;

/**
 * A shape family, optionally paired with a continuous Brown-Resnick law for
 * atoms below the data.
 */
typedef struct M3Family M3Family;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; valid until the next
 * failing call on the same thread. Never null.
 */
const char *m3_last_error_message(void);

/**
 * Gaussian-shape (Smith) family.
 */
enum M3Status m3_family_smith(struct M3Family **out);

/**
 * `n_shapes` Brown-Resnick shapes on `{-half_width, ..., half_width}` with
 * spacing `step`; atoms below the data use fresh shapes on a grid of half
 * width `below_half_width`, or the family itself when that is 0.
 */
enum M3Status m3_family_brown_resnick(size_t n_shapes,
                                      double half_width,
                                      double step,
                                      double below_half_width,
                                      uint64_t seed,
                                      struct M3Family **out);

/**
 * Family of `n_shapes` piecewise-linear shapes. Shape `k` has `lens[k]`
 * knots; `knots` and `values` hold all shapes back to back.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths.
 */
enum M3Status m3_family_tabulated(const double *knots,
                                  const double *values,
                                  const size_t *lens,
                                  size_t n_shapes,
                                  const double *probs,
                                  double support_radius,
                                  double normalization_tol,
                                  struct M3Family **out);

/**
 * # Safety
 * `family` must come from an `m3_family_*` constructor and not be used again.
 */
void m3_family_free(struct M3Family *family);

/**
 * Number of shapes in the family.
 *
 * # Safety
 * `family` must be a live handle.
 */
enum M3Status m3_family_len(const struct M3Family *family, size_t *out);

/**
 * `n` unconditional fields at `sites`, row-major into `out` (`n * n_sites`).
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths.
 */
enum M3Status m3_simulate(const struct M3Family *family,
                          const double *sites,
                          size_t n_sites,
                          size_t n,
                          uint64_t seed,
                          double *out);

/**
 * Conditions `family` on `values` at `sites` with grouping tolerance `eps`
 * (pass 0 for the default 1e-6).
 *
 * # Safety
 * Pointers must reference arrays of length `n`; `family` must be live.
 */
enum M3Status m3_conditioner_new(const struct M3Family *family,
                                 const double *sites,
                                 const double *values,
                                 size_t n,
                                 double eps,
                                 struct M3Conditioner **out);

/**
 * # Safety
 * `c` must come from `m3_conditioner_new` and not be used again.
 */
void m3_conditioner_free(struct M3Conditioner *c);

/**
 * Number of scenarios.
 *
 * # Safety
 * `c` must be live.
 */
enum M3Status m3_conditioner_scenario_count(const struct M3Conditioner *c, size_t *out);

/**
 * Probability that the observations listed in `members` (indices into the
 * sites sorted increasingly) are produced by one atom.
 *
 * # Safety
 * `members` must reference `len` indices; `c` must be live.
 */
enum M3Status m3_conditioner_joint_probability(const struct M3Conditioner *c,
                                               const size_t *members,
                                               size_t len,
                                               double *out);

/**
 * `n_draws` conditional values at `t0` into `out`.
 *
 * # Safety
 * `out` must hold `n_draws` values; `c` must be live.
 */
enum M3Status m3_conditioner_predictive(const struct M3Conditioner *c,
                                        double t0,
                                        size_t n_draws,
                                        uint64_t seed,
                                        double *out);

/**
 * `n_paths` conditional paths over `grid`, row-major into `out`
 * (`n_paths * n_grid`).
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths; `c` must be live.
 */
enum M3Status m3_conditioner_paths(const struct M3Conditioner *c,
                                   const double *grid,
                                   size_t n_grid,
                                   size_t n_paths,
                                   uint64_t seed,
                                   double *out);

/**
 * Scenario table as a JSON string; release it with `m3_string_free`.
 *
 * # Safety
 * `c` must be live.
 */
enum M3Status m3_conditioner_scenarios_json(const struct M3Conditioner *c, char **out);

/**
 * # Safety
 * `s` must come from this library and not be used again.
 */
void m3_string_free(char *s);

/**
 * CRPS of `n` draws at `x` (larger is better); NaN on bad input.
 *
 * # Safety
 * `draws` must reference `n` values.
 */
double m3_crps(const double *draws, size_t n, double x);

/**
 * Library version, static.
 */
const char *m3_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* M3COND_H */
