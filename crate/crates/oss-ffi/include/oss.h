#ifndef OSS_FFI_H
#define OSS_FFI_H

/* Generated by cbindgen from the oss-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum {
  OSS_STATUS_OK = 0,
  OSS_STATUS_NULL_POINTER = 1,
  OSS_STATUS_INVALID_UTF8 = 2,
  OSS_STATUS_INVALID_ARGUMENT = 3,
  OSS_STATUS_DOMAIN_ERROR = 4,
  OSS_STATUS_PROTOCOL_ERROR = 5,
  OSS_STATUS_PROVIDER_ERROR = 6,
  OSS_STATUS_NUMERICAL_ERROR = 7,
  OSS_STATUS_INFEASIBLE = 8,
  OSS_STATUS_CAP_EXCEEDED = 9,
  OSS_STATUS_INTERNAL_ERROR = 10,
  OSS_STATUS_IO_ERROR = 11,
  OSS_STATUS_PANIC = 12,
} OssStatus;

/**
 * Opaque velocity-provider handle.
 */
typedef struct OssProvider OssProvider;

/**
 * Opaque searched-schedule handle.
 */
typedef struct OssSchedule OssSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *oss_last_error_message(void);

/**
 * Create a provider from a Gaussian-mixture spec JSON
 * (`{"dim":D,"components":[{"weight":..,"mean":[..],"scale":..},..]}`).
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string; `out` must be a valid
 * destination pointer. The returned handle must be freed with
 * [`oss_provider_free`].
 */
OssStatus oss_mixture_provider_new(const char *spec_json, OssProvider **out);

/**
 * Create a provider that spawns `command` (via `sh -c`) and speaks the
 * newline-delimited JSON protocol on its stdio.
 *
 * # Safety
 * Same contracts as [`oss_mixture_provider_new`].
 */
OssStatus oss_exec_provider_new(const char *command, uintptr_t dim, OssProvider **out);

/**
 * State dimension of a provider; 0 for a null handle.
 *
 * # Safety
 * `provider` must be a live handle from this library or null.
 */
uintptr_t oss_provider_dim(const OssProvider *provider);

/**
 * Batched velocity evaluation over flat row-major arrays: `states` holds
 * `count * dim` values, `times` holds `count`, and `out_velocities`
 * receives `count * dim` values.
 *
 * # Safety
 * All pointers must cover the stated extents; `provider` must be live.
 */
OssStatus oss_provider_velocity_batch(OssProvider *provider,
                                      const double *states,
                                      const double *times,
                                      uintptr_t count,
                                      double *out_velocities);

/**
 * # Safety
 * `provider` must be a handle from this library, not yet freed, or null.
 */
void oss_provider_free(OssProvider *provider);

/**
 * Search the optimal schedule for one seeded sample. `config_json` is
 * `{"teacher_steps":N,"student_steps":M,"order":1,"metric":"xt-mse",
 * "seed":0,"schedule":{"kind":"fm"}}`; omitted fields default as shown.
 *
 * # Safety
 * `provider` must be live; `config_json` NUL-terminated; `out` valid. The
 * returned handle must be freed with [`oss_schedule_free`].
 */
OssStatus oss_search_schedule(OssProvider *provider, const char *config_json, OssSchedule **out);

/**
 * Number of schedule points (M + 1); 0 for a null handle.
 *
 * # Safety
 * `schedule` must be a live handle or null.
 */
uintptr_t oss_schedule_len(const OssSchedule *schedule);

/**
 * Copy the teacher-grid indices (descending from N to 0) into `out`.
 *
 * # Safety
 * `out` must hold at least `len` elements, with `len` from
 * [`oss_schedule_len`].
 */
OssStatus oss_schedule_indices(const OssSchedule *schedule, uint64_t *out, uintptr_t len);

/**
 * Copy the flow-matching times (descending from 1 to 0) into `out`.
 *
 * # Safety
 * Same contracts as [`oss_schedule_indices`].
 */
OssStatus oss_schedule_times(const OssSchedule *schedule, double *out, uintptr_t len);

/**
 * Serialize the schedule to its JSON file format. The returned string must
 * be freed with [`oss_string_free`].
 *
 * # Safety
 * `schedule` must be live; `out` must be a valid destination pointer.
 */
OssStatus oss_schedule_to_json(const OssSchedule *schedule, char **out);

/**
 * # Safety
 * `schedule` must be a handle from this library, not yet freed, or null.
 */
void oss_schedule_free(OssSchedule *schedule);

/**
 * Free a string returned by [`oss_schedule_to_json`].
 *
 * # Safety
 * `s` must originate from this library and not have been freed already.
 */
void oss_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OSS_FFI_H */
