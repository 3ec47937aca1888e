#ifndef PSLAB_H
#define PSLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible function.
 */
typedef enum PslabStatus {
  PSLAB_STATUS_OK = 0,
  PSLAB_STATUS_NULL_POINTER = 1,
  PSLAB_STATUS_INVALID_ARGUMENT = 2,
  PSLAB_STATUS_INVALID_ENVIRONMENT = 3,
  PSLAB_STATUS_UNSTABLE = 4,
  PSLAB_STATUS_DOMAIN = 5,
  PSLAB_STATUS_PRECONDITION = 6,
  PSLAB_STATUS_FIT = 7,
  PSLAB_STATUS_INTERNAL = 99,
} PslabStatus;

/**
 * Estimation route.
 */
typedef enum PslabMethod {
  PSLAB_METHOD_MC_JOINT = 0,
  PSLAB_METHOD_QUADRATURE_HYBRID = 1,
  PSLAB_METHOD_CLOSED_FORM = 2,
} PslabMethod;

/**
 * Opaque Markov environment.
 */
typedef struct PslabEnv PslabEnv;

/**
 * Opaque M/M/1 parameters.
 */
typedef struct PslabQueue PslabQueue;

typedef struct PslabBusyStats {
  double e_b;
  double e_b2;
  double e_b3;
  double e_a;
  double e_n;
  double e_nb;
  double e_d_sum;
} PslabBusyStats;

typedef struct PslabEstimate {
  double value;
  double std_error;
  uint64_t n_samples;
  enum PslabMethod method;
} PslabEstimate;

/**
 * Coefficients of the expansions of area, busy period and bit rate.
 */
typedef struct PslabExpansion {
  /**
   * Exact coefficient of `eps` in the mean area.
   */
  double first_order_area;
  struct PslabEstimate a_plus;
  struct PslabEstimate a_minus;
  struct PslabEstimate a_pm;
  struct PslabEstimate b_plus;
  struct PslabEstimate b_minus;
  struct PslabEstimate c;
  /**
   * `[1, eps, eps^2]` coefficients of the mean area, busy period and bit rate.
   */
  double area_poly[3];
  double busy_poly[3];
  double bitrate_poly[3];
} PslabExpansion;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pslab_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length, or 0 if none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t pslab_last_error_message(char *buf, size_t len);

/**
 * # Safety
 * `out` must be a valid pointer. The handle must be released with
 * [`pslab_queue_free`].
 */
enum PslabStatus pslab_queue_new(double lambda, double mu, struct PslabQueue **out_queue);

/**
 * # Safety
 * `queue` must be null or a handle from [`pslab_queue_new`] not yet freed.
 */
void pslab_queue_free(struct PslabQueue *queue);

/**
 * Environment from a row-major `n x n` generator, rewards `p` and speed `alpha`.
 *
 * # Safety
 * `generator` must point to `n * n` doubles, `p` to `n` doubles and
 * `out_env` must be valid. Release with [`pslab_env_free`].
 */
enum PslabStatus pslab_env_new(size_t n,
                               const double *generator,
                               const double *p,
                               double alpha,
                               struct PslabEnv **out_env);

/**
 * # Safety
 * `env` must be null or a handle from [`pslab_env_new`] not yet freed.
 */
void pslab_env_free(struct PslabEnv *env);

/**
 * Number of environment states, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t pslab_env_state_count(const struct PslabEnv *env);

/**
 * Writes the stationary law into `out_pi[0..len]`; `len` must equal the state count.
 *
 * # Safety
 * `env` must be live and `out_pi` must point to `len` writable doubles.
 */
enum PslabStatus pslab_env_stationary(const struct PslabEnv *env, double *out_pi, size_t len);

/**
 * Stationary mean and variance of `p(X)`.
 *
 * # Safety
 * `env`, `out_mean` and `out_var` must be valid.
 */
enum PslabStatus pslab_env_p_moments(const struct PslabEnv *env, double *out_mean, double *out_var);

/**
 * Auto-covariance `Cov(p(X(0)), p(X(u)))` under the stationary law.
 *
 * # Safety
 * `env` and `out_value` must be valid.
 */
enum PslabStatus pslab_env_covariance(const struct PslabEnv *env, double u, double *out_value);

/**
 * Closed-form busy-period statistics of the unperturbed queue.
 *
 * # Safety
 * `queue` and `out_stats` must be valid.
 */
enum PslabStatus pslab_busy_stats(const struct PslabQueue *queue, struct PslabBusyStats *out_stats);

/**
 * Busy-period Laplace transform `E[e^{-sB}]`.
 *
 * # Safety
 * `queue` and `out_value` must be valid.
 */
enum PslabStatus pslab_busy_lst(const struct PslabQueue *queue, double s, double *out_value);

/**
 * Closed-form two-state limit for `c` at environment speed `alpha`.
 *
 * # Safety
 * `queue` and `out_value` must be valid.
 */
enum PslabStatus pslab_auxey_rhs(const struct PslabQueue *queue,
                                 double alpha,
                                 double var_p,
                                 double *out_value);

/**
 * Exact area, busy period and bit rate when `p` is the constant `p0`.
 *
 * # Safety
 * `queue` and the three output pointers must be valid.
 */
enum PslabStatus pslab_constant_p_oracle(const struct PslabQueue *queue,
                                         double p0,
                                         double eps,
                                         double *out_area,
                                         double *out_busy,
                                         double *out_bitrate);

/**
 * Estimates one second-order coefficient from `n` busy periods.
 *
 * `which` is a [`PslabCoefficient`] and `method` a [`PslabMethod`] value.
 * Results depend only on `seed`, `n` and `method`, never on `workers`
 * (`0` uses every core).
 *
 * # Safety
 * `queue`, `env` and `out_estimate` must be valid.
 */
enum PslabStatus pslab_estimate_coefficient(const struct PslabQueue *queue,
                                            const struct PslabEnv *env,
                                            uint32_t which,
                                            uint32_t method,
                                            uint64_t n,
                                            uint64_t seed,
                                            size_t workers,
                                            struct PslabEstimate *out_estimate);

/**
 * Estimates every expansion coefficient from `n` busy periods.
 *
 * `method` is a [`PslabMethod`] value.
 * # Safety
 * `queue`, `env` and `out_expansion` must be valid.
 */
enum PslabStatus pslab_expansion(const struct PslabQueue *queue,
                                 const struct PslabEnv *env,
                                 uint32_t method,
                                 uint64_t n,
                                 uint64_t seed,
                                 size_t workers,
                                 struct PslabExpansion *out_expansion);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSLAB_H */
