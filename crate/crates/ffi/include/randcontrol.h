#ifndef RANDCONTROL_H
#define RANDCONTROL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; the first four match the command-line exit codes.
 */
typedef enum RcStatus {
  RC_STATUS_OK = 0,
  RC_STATUS_TOLERANCE_FAILURE = 1,
  RC_STATUS_CONFIG_ERROR = 2,
  RC_STATUS_NUMERICAL_ERROR = 3,
  RC_STATUS_NULL_POINTER = 4,
  RC_STATUS_INVALID_UTF8 = 5,
  RC_STATUS_PANIC = 6,
} RcStatus;

/**
 * Run mode selector for [`rc_config_set_mode`].
 */
typedef enum RcMode {
  RC_MODE_BRUTE = 0,
  RC_MODE_RANDOMIZED = 1,
  RC_MODE_BSDE = 2,
  RC_MODE_ORACLE = 3,
  RC_MODE_CAMPAIGN = 4,
} RcMode;

/**
 * Validated experiment configuration.
 */
typedef struct RcConfig RcConfig;

/**
 * Outcome of [`rc_run`].
 */
typedef struct RcResult RcResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *rc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rc_version(void);

/**
 * Parse and validate JSON configuration text into a new handle.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RcStatus rc_config_parse(const char *json, struct RcConfig **out);

/**
 * # Safety
 * `cfg` must come from [`rc_config_parse`] and not be used afterwards.
 */
void rc_config_free(struct RcConfig *cfg);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum RcStatus rc_config_set_seed(struct RcConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum RcStatus rc_config_set_mode(struct RcConfig *cfg, enum RcMode mode);

/**
 * Run the configured mode. `out_dir` may be null to skip writing CSV files. On
 * `RC_STATUS_OK` or `RC_STATUS_TOLERANCE_FAILURE`, `*out` receives a result
 * handle; otherwise it is set to null.
 *
 * # Safety
 * `cfg` must be a live handle, `out_dir` null or NUL-terminated, `out` valid.
 */
enum RcStatus rc_run(const struct RcConfig *cfg,
                     const char *out_dir,
                     bool record_timings,
                     struct RcResult **out);

/**
 * 1 when every tolerance was met, 0 otherwise (or for a null handle).
 *
 * # Safety
 * `res` must be null or a live handle.
 */
int32_t rc_result_passed(const struct RcResult *res);

/**
 * Human-readable summary owned by the result handle.
 *
 * # Safety
 * `res` must be null or a live handle.
 */
const char *rc_result_summary(const struct RcResult *res);

/**
 * # Safety
 * `res` must come from [`rc_run`] and not be used afterwards.
 */
void rc_result_free(struct RcResult *res);

/**
 * `-max(|x0| - (T - t), 0)`.
 */
double rc_bangbang_closed_form(double x0, double t, double horizon);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RANDCONTROL_H */
