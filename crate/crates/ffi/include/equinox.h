#ifndef EQUINOX_H
#define EQUINOX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum EqxStatus {
  EQX_STATUS_OK = 0,
  EQX_STATUS_NULL_POINTER = 1,
  /**
   * Invalid configuration or argument; the message names the field.
   */
  EQX_STATUS_INVALID_CONFIG = 2,
  EQX_STATUS_IO = 3,
  EQX_STATUS_INVALID_UTF8 = 4,
  /**
   * Simulation or metric failure.
   */
  EQX_STATUS_RUNTIME = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  EQX_STATUS_PANIC = 6,
} EqxStatus;

/**
 * A solo-run GPU profile.
 */
typedef struct EqxProfile EqxProfile;

/**
 * The report of one simulation.
 */
typedef struct EqxReport EqxReport;

/**
 * A workload trace.
 */
typedef struct EqxTrace EqxTrace;

/**
 * Headline numbers of a report.
 */
typedef struct EqxSummary {
  uint64_t completed;
  uint64_t rejected;
  double duration_s;
  double throughput;
  double mean_util;
  double jain_hf;
  double jain_ttft_p90;
  /**
   * Service-difference statistics; zero when undefined (fewer than two clients).
   */
  double max_diff;
  double avg_diff;
  double var_diff;
} EqxSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or null. The
 * pointer stays valid until the next `eqx_*` call on the same thread.
 */
const char *eqx_last_error(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void eqx_string_free(char *s);

/**
 * Generate a preset workload (`balanced`, `poisson`, `overload`, ...).
 *
 * # Safety
 * `preset` must be a NUL-terminated string; `out` must be writable.
 */
enum EqxStatus eqx_trace_generate(const char *preset,
                                  double duration_s,
                                  uint64_t seed,
                                  struct EqxTrace **out);

/**
 * Load a CSV trace from `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum EqxStatus eqx_trace_load(const char *path, struct EqxTrace **out);

/**
 * Parse a CSV trace held in memory.
 *
 * # Safety
 * `csv` must be a NUL-terminated string; `out` must be writable.
 */
enum EqxStatus eqx_trace_parse(const char *csv, struct EqxTrace **out);

/**
 * Number of requests in the trace.
 *
 * # Safety
 * `trace` must be a live handle; `out` must be writable.
 */
enum EqxStatus eqx_trace_len(const struct EqxTrace *trace, size_t *out);

/**
 * Hex SHA-256 content hash of the trace. Free with `eqx_string_free`.
 *
 * # Safety
 * `trace` must be a live handle; `out` must be writable.
 */
enum EqxStatus eqx_trace_hash(const struct EqxTrace *trace, char **out);

/**
 * # Safety
 * `trace` must be null or a handle not yet freed.
 */
void eqx_trace_free(struct EqxTrace *trace);

/**
 * Simulate `trace`. `spec_json` holds optional `policy`, `predictor`,
 * `perf` and `engine` objects (same schema as the run config); null means
 * all defaults. `seed` drives predictor noise only.
 *
 * # Safety
 * `trace` must be a live handle, `spec_json` null or NUL-terminated, `out` writable.
 */
enum EqxStatus eqx_simulate(const struct EqxTrace *trace,
                            const char *spec_json,
                            uint64_t seed,
                            struct EqxReport **out);

/**
 * Run a full JSON run configuration for one seed (the config's seed list
 * is ignored).
 *
 * # Safety
 * `config_json` must be NUL-terminated; `out` writable.
 */
enum EqxStatus eqx_run_config(const char *config_json, uint64_t seed, struct EqxReport **out);

/**
 * Full report as JSON. Free with `eqx_string_free`.
 *
 * # Safety
 * `report` must be a live handle; `out` writable.
 */
enum EqxStatus eqx_report_json(const struct EqxReport *report, char **out);

/**
 * # Safety
 * `report` must be a live handle; `out` writable.
 */
enum EqxStatus eqx_report_summary(const struct EqxReport *report, struct EqxSummary *out);

/**
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void eqx_report_free(struct EqxReport *report);

/**
 * Jain's fairness index of `len` values.
 *
 * # Safety
 * `values` must point to `len` doubles; `out` writable.
 */
enum EqxStatus eqx_jain_index(const double *values, size_t len, double *out);

/**
 * Build the solo-run profile. `perf_json` is a perf-params object or null
 * for defaults; bucket bounds and reference input come from engine defaults.
 *
 * # Safety
 * `perf_json` null or NUL-terminated; `out` writable.
 */
enum EqxStatus eqx_profile_build(const char *perf_json, struct EqxProfile **out);

/**
 * Number of output-length buckets in the profile.
 *
 * # Safety
 * `profile` must be a live handle; `out` writable.
 */
enum EqxStatus eqx_profile_len(const struct EqxProfile *profile, size_t *out);

/**
 * Profile as CSV (`bucket_upper,latency_ms,gpu_util,tps`). Free with `eqx_string_free`.
 *
 * # Safety
 * `profile` must be a live handle; `out` writable.
 */
enum EqxStatus eqx_profile_csv(const struct EqxProfile *profile, char **out);

/**
 * # Safety
 * `profile` must be null or a handle not yet freed.
 */
void eqx_profile_free(struct EqxProfile *profile);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EQUINOX_H */
