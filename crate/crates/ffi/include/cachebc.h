#ifndef CACHEBC_H
#define CACHEBC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CbcStatus {
  CBC_STATUS_OK = 0,
  CBC_STATUS_NULL_POINTER = 1,
  CBC_STATUS_INVALID_ARGUMENT = 2,
  CBC_STATUS_NO_DELIVERY_NEEDED = 3,
  CBC_STATUS_INFEASIBLE_SPLIT = 4,
  CBC_STATUS_INVALID_PACKETIZATION = 5,
  CBC_STATUS_DECODE_FAILURE = 6,
  CBC_STATUS_UNDEFINED_GAP = 7,
  CBC_STATUS_INTERNAL = 8,
} CbcStatus;

/**
 * Opaque system parameters `(K, N, M, α)`.
 */
typedef struct CbcParams CbcParams;

/**
 * Opaque result of one end-to-end simulation.
 */
typedef struct CbcReport CbcReport;

/**
 * Headline quantities for one instance, as doubles.
 */
typedef struct CbcPerformance {
  uint32_t eta;
  double t_simple;
  double t_best;
  double t_lower;
  double dof;
  double gap;
} CbcPerformance;

typedef struct CbcDcsitLoad {
  double scalars;
  double load;
} CbcDcsitLoad;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a parameter handle. `m` and `alpha` are decimal or `a/b` strings.
 *
 * # Safety
 * `m` and `alpha` must be nul-terminated strings; `out` must be writable.
 */
enum CbcStatus cbc_params_new(uint32_t k,
                              uint64_t n,
                              const char *m,
                              const char *alpha,
                              struct CbcParams **out);

/**
 * # Safety
 * `params` must come from [`cbc_params_new`] and not be freed twice.
 */
void cbc_params_free(struct CbcParams *params);

/**
 * # Safety
 * `params` must be a live handle; `out` must be writable.
 */
enum CbcStatus cbc_analyze(const struct CbcParams *params, struct CbcPerformance *out);

/**
 * Simulates one demand vector. With `requests` null the demand defaults to
 * `(1, 2, …, K)`; otherwise it must hold `requests_len == K` one-based file
 * indices. The report is returned even when decoding checks fail; inspect
 * it with [`cbc_report_passed`].
 *
 * # Safety
 * `params` must be a live handle, `requests` null or valid for
 * `requests_len` reads, and `out` writable.
 */
enum CbcStatus cbc_simulate(const struct CbcParams *params,
                            const uint32_t *requests,
                            size_t requests_len,
                            uint64_t seed,
                            struct CbcReport **out);

/**
 * Whether every decode, duration and causality check held.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
bool cbc_report_passed(const struct CbcReport *report);

/**
 * Report as a JSON string, to be released with [`cbc_string_free`].
 * Returns null on error.
 *
 * # Safety
 * `report` must be a live handle.
 */
char *cbc_report_json(const struct CbcReport *report);

/**
 * # Safety
 * `report` must come from [`cbc_simulate`] and not be freed twice.
 */
void cbc_report_free(struct CbcReport *report);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void cbc_string_free(char *s);

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *cbc_last_error_message(void);

/**
 * Large-K approximation of the sum degrees of freedom.
 *
 * # Safety
 * `out` must be writable.
 */
enum CbcStatus cbc_dof_log_approx(double gamma, double alpha, double *out);

/**
 * Delayed-CSIT feedback scalars and their load normalised by `T_c·K`.
 *
 * # Safety
 * `out` must be writable.
 */
enum CbcStatus cbc_dcsit_load(uint64_t k,
                              uint64_t cumulative,
                              double coherence,
                              struct CbcDcsitLoad *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CACHEBC_H */
