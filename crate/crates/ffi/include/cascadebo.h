#ifndef CASCADEBO_H
#define CASCADEBO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CbStatus {
  CB_STATUS_OK = 0,
  CB_STATUS_MALFORMED_CASE = 1,
  CB_STATUS_INFEASIBLE_CASE = 2,
  CB_STATUS_INFEASIBLE = 3,
  CB_STATUS_SINGULAR_SYSTEM = 4,
  CB_STATUS_DIMENSION_MISMATCH = 5,
  CB_STATUS_ILL_CONDITIONED = 6,
  CB_STATUS_INVALID_ARGUMENT = 7,
  CB_STATUS_CONFIG = 8,
  CB_STATUS_INTEGRITY = 9,
  CB_STATUS_IO = 10,
  CB_STATUS_NULL_POINTER = 11,
  CB_STATUS_PANIC = 12,
} CbStatus;

/**
 * Opaque network handle with a lazily solved equilibrium.
 */
typedef struct CbNetwork CbNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the calling thread's most recent failure, or null. The
 * pointer stays valid until the next failing call on this thread.
 */
const char *cb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cb_version(void);

/**
 * Parses MATPOWER case text into a new handle.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CbStatus cb_network_parse(const char *text, struct CbNetwork **out);

/**
 * Creates a handle for the bundled 30-bus case.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CbStatus cb_network_case30(struct CbNetwork **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `net` must come from this library and not be used afterwards.
 */
void cb_network_free(struct CbNetwork *net);

/**
 * # Safety
 * `net` must be a live handle or null (returns 0).
 */
size_t cb_network_num_buses(const struct CbNetwork *net);

/**
 * # Safety
 * `net` must be a live handle or null (returns 0).
 */
size_t cb_network_num_lines(const struct CbNetwork *net);

/**
 * Writes the equilibrium line flows (per unit) and the dispatch cost.
 *
 * # Safety
 * `flows` must hold `len` doubles; `cost` may be null.
 */
enum CbStatus cb_equilibrium(const struct CbNetwork *net, double *flows, size_t len, double *cost);

/**
 * Effective limits for tightening vector `x`.
 *
 * # Safety
 * `x` and `limits` must each hold `len` doubles.
 */
enum CbStatus cb_tighten_limits(const struct CbNetwork *net,
                                const double *x,
                                size_t len,
                                double *limits);

/**
 * Mean failed-line count over `simulations` cascades under the default
 * rate model.
 *
 * # Safety
 * `x` must hold `len` doubles; `mean` must be valid; `std_error` may be null.
 */
enum CbStatus cb_estimate_severity(const struct CbNetwork *net,
                                   const double *x,
                                   size_t len,
                                   size_t simulations,
                                   double t_max,
                                   uint64_t seed,
                                   double *mean,
                                   double *std_error);

/**
 * Closed-form expected improvement of a Gaussian over `best`.
 */
double cb_expected_improvement(double mean, double sigma, double best);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CASCADEBO_H */
