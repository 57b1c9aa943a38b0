#ifndef KOAP_FFI_H
#define KOAP_FFI_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum KoapStatus {
  KOAP_STATUS_OK = 0,
  KOAP_STATUS_NULL_POINTER = 1,
  KOAP_STATUS_INVALID_UTF8 = 2,
  KOAP_STATUS_BUFFER_TOO_SMALL = 3,
  KOAP_STATUS_DIMENSION = 4,
  KOAP_STATUS_CHECKPOINT = 5,
  KOAP_STATUS_IO = 6,
  KOAP_STATUS_CONFIG = 7,
  KOAP_STATUS_INTERNAL = 8,
} KoapStatus;

/**
 * A trained controller of any method.
 */
typedef struct KoapController KoapController;

/**
 * A trained state planner.
 */
typedef struct KoapPlanner KoapPlanner;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *koap_last_error(void);

/**
 * Loads a planner checkpoint into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum KoapStatus koap_planner_load(const char *path, struct KoapPlanner **out);

/**
 * Releases a planner; null is ignored.
 *
 * # Safety
 * `planner` must come from [`koap_planner_load`] and not be used afterwards.
 */
void koap_planner_free(struct KoapPlanner *planner);

/**
 * State dimension, history length and planning horizon of a planner.
 *
 * # Safety
 * `planner` must be a live handle; output pointers may be null.
 */
enum KoapStatus koap_planner_dims(const struct KoapPlanner *planner,
                                  uintptr_t *state_dim,
                                  uintptr_t *history,
                                  uintptr_t *horizon);

/**
 * Samples one plan. `history` holds `history_len x state_dim` values,
 * oldest first. The plan (current state followed by the horizon) is written
 * row-major to `out`, and its row count to `rows_written`.
 *
 * # Safety
 * All buffers must be valid for the stated lengths.
 */
enum KoapStatus koap_planner_sample(const struct KoapPlanner *planner,
                                    const double *current,
                                    uintptr_t state_dim,
                                    const double *history,
                                    uintptr_t history_len,
                                    uint64_t seed,
                                    double *out,
                                    uintptr_t out_len,
                                    uintptr_t *rows_written);

/**
 * Loads a controller checkpoint of any method into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum KoapStatus koap_controller_load(const char *path, struct KoapController **out);

/**
 * Releases a controller; null is ignored.
 *
 * # Safety
 * `controller` must come from [`koap_controller_load`] and not be used
 * afterwards.
 */
void koap_controller_free(struct KoapController *controller);

/**
 * History length and action horizon the controller expects.
 *
 * # Safety
 * `controller` must be a live handle; output pointers may be null.
 */
enum KoapStatus koap_controller_window(const struct KoapController *controller,
                                       uintptr_t *history,
                                       uintptr_t *horizon);

/**
 * Infers actions for a plan. `history` holds `history_len` states and
 * `plan` holds `plan_len` states (current state first), each of
 * `state_dim` values. Actions are written row-major to `out`.
 *
 * # Safety
 * All buffers must be valid for the stated lengths.
 */
enum KoapStatus koap_controller_infer(const struct KoapController *controller,
                                      const double *history,
                                      uintptr_t history_len,
                                      const double *plan,
                                      uintptr_t plan_len,
                                      uintptr_t state_dim,
                                      double *out,
                                      uintptr_t out_len,
                                      uintptr_t *rows_written,
                                      uintptr_t *cols_written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KOAP_FFI_H */
