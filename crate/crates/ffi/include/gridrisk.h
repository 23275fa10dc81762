#ifndef GRIDRISK_H
#define GRIDRISK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Region selector for [`gr_membership`].
 */
typedef enum GrRegionKind {
  GR_REGION_KIND_UP = 0,
  GR_REGION_KIND_STAR = 1,
  /**
   * Sampled region; needs a sample count and a seed.
   */
  GR_REGION_KIND_CI = 2,
} GrRegionKind;

/**
 * Result of every fallible call.
 */
typedef enum GrStatus {
  GR_STATUS_OK = 0,
  GR_STATUS_NULL_POINTER = 1,
  GR_STATUS_INVALID_UTF8 = 2,
  /**
   * Case text could not be parsed or violates the schema.
   */
  GR_STATUS_INVALID_INPUT = 3,
  /**
   * The grid is unusable: disconnected, bad parameters, undefined capacities.
   */
  GR_STATUS_INVALID_NETWORK = 4,
  /**
   * A matrix failed a numerical precondition.
   */
  GR_STATUS_NUMERICAL = 5,
  GR_STATUS_INVALID_ARGUMENT = 6,
  GR_STATUS_BUFFER_TOO_SMALL = 7,
  GR_STATUS_IO = 8,
  GR_STATUS_PANIC = 9,
} GrStatus;

/**
 * A loaded scenario with its flow factorization.
 */
typedef struct GrScenario GrScenario;

/**
 * Bounds at one mean. `s_star` is NaN when the minimizer is at infinity.
 */
typedef struct GrAssessment {
  double max_sigma;
  double r_up;
  double r_star;
  double s_star;
  double threshold;
  double failure_bound;
  bool in_up;
  bool in_star;
} GrAssessment;

/**
 * Monte Carlo estimates with standard errors.
 */
typedef struct GrMcEstimate {
  double failure_prob;
  double failure_std_error;
  double risk;
  double risk_std_error;
  size_t n_samples;
} GrMcEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gr_version(void);

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *gr_last_error_message(void);

/**
 * Loads a JSON scenario from a string.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must be writable.
 */
enum GrStatus gr_scenario_from_json(const char *json, struct GrScenario **out);

/**
 * Loads a MATPOWER case from a string with i.i.d. injections of
 * `variance` (per-unit²) around the file's injections and line capacities
 * `max(factor·|mean flow|, floor)`. Pass `floor <= 0` for no floor.
 *
 * # Safety
 * `matpower` must be NUL-terminated; `out` must be writable.
 */
enum GrStatus gr_scenario_from_matpower(const char *matpower,
                                        double variance,
                                        double factor,
                                        double floor,
                                        double q,
                                        struct GrScenario **out);

/**
 * Loads a `.json` or `.m` file with the command-line tool's defaults.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum GrStatus gr_scenario_load_file(const char *path, struct GrScenario **out);

/**
 * Releases a handle. `NULL` is ignored.
 *
 * # Safety
 * `h` must come from a loader of this library and not be used afterwards.
 */
void gr_scenario_free(struct GrScenario *h);

/**
 * Bus count, line count and dimension of μ. Any output may be `NULL`.
 *
 * # Safety
 * `h` must be a live handle.
 */
enum GrStatus gr_scenario_dims(const struct GrScenario *h,
                               size_t *n_buses,
                               size_t *n_lines,
                               size_t *mu_dim);

/**
 * The scenario's target failure probability.
 *
 * # Safety
 * `h` must be a live handle; `q` must be writable.
 */
enum GrStatus gr_scenario_q(const struct GrScenario *h, double *q);

/**
 * The scenario's mean injections (length: μ dimension).
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum GrStatus gr_scenario_mu(const struct GrScenario *h, double *buf, size_t len);

/**
 * Per-line standard deviations of the normalized flows (length: lines).
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum GrStatus gr_scenario_sigma(const struct GrScenario *h, double *buf, size_t len);

/**
 * Mean normalized flows at `mu` (or the scenario's mean if `mu` is `NULL`).
 *
 * # Safety
 * `mu` must hold `mu_len` doubles unless `NULL`; `buf` must hold `len`.
 */
enum GrStatus gr_scenario_nu(const struct GrScenario *h,
                             const double *mu,
                             size_t mu_len,
                             double *buf,
                             size_t len);

/**
 * Risk and failure-probability bounds at `mu`. `q <= 0` uses the
 * scenario's target.
 *
 * # Safety
 * `mu` must hold `mu_len` doubles unless `NULL`; `out` must be writable.
 */
enum GrStatus gr_assess(const struct GrScenario *h,
                        const double *mu,
                        size_t mu_len,
                        double q,
                        struct GrAssessment *out);

/**
 * Region membership at `mu`. `n_samples` and `seed` are only read for
 * [`GrRegionKind::Ci`].
 *
 * # Safety
 * `mu` must hold `mu_len` doubles unless `NULL`; `inside` must be writable.
 */
enum GrStatus gr_membership(const struct GrScenario *h,
                            const double *mu,
                            size_t mu_len,
                            double q,
                            enum GrRegionKind kind,
                            size_t n_samples,
                            uint64_t seed,
                            bool *inside);

/**
 * The explicit region as `A μ ≤ b` with `2·lines` rows; `a` is row-major
 * `2·lines × dim`. `empty` is set when no mean can qualify.
 *
 * # Safety
 * `a` must hold `a_len` doubles, `b` `b_len`; `empty` may be `NULL`.
 */
enum GrStatus gr_rup_halfspaces(const struct GrScenario *h,
                                double q,
                                double *a,
                                size_t a_len,
                                double *b,
                                size_t b_len,
                                bool *empty);

/**
 * Monte Carlo failure probability and risk level at `mu`; results depend
 * only on `(mu, n_samples, seed)`.
 *
 * # Safety
 * `mu` must hold `mu_len` doubles unless `NULL`; `out` must be writable.
 */
enum GrStatus gr_mc_estimate(const struct GrScenario *h,
                             const double *mu,
                             size_t mu_len,
                             size_t n_samples,
                             uint64_t seed,
                             struct GrMcEstimate *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIDRISK_H */
