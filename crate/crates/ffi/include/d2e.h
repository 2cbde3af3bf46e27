#ifndef D2E_H
#define D2E_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status returned by every fallible call.
 */
typedef enum D2eStatus {
  D2E_STATUS_OK = 0,
  D2E_STATUS_NULL_POINTER = 1,
  D2E_STATUS_INVALID_UTF8 = 2,
  D2E_STATUS_UNKNOWN_KEY = 3,
  D2E_STATUS_TYPE_MISMATCH = 4,
  D2E_STATUS_INVALID_CONFIG = 5,
  D2E_STATUS_IO = 6,
  D2E_STATUS_CORRUPT_CHECKPOINT = 7,
  D2E_STATUS_VERSION_MISMATCH = 8,
  D2E_STATUS_CONFIG_MISMATCH = 9,
  D2E_STATUS_BUFFER_TOO_SMALL = 10,
  D2E_STATUS_INVALID_ARGUMENT = 11,
  D2E_STATUS_FAILED = 12,
  D2E_STATUS_PANIC = 13,
} D2eStatus;

/**
 * Trained agent. Create with [`d2e_agent_load`], release with [`d2e_agent_free`].
 */
typedef struct D2eAgent D2eAgent;

/**
 * Run configuration. Create with [`d2e_config_new`], release with [`d2e_config_free`].
 */
typedef struct D2eConfig D2eConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failing call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *d2e_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *d2e_version(void);

/**
 * New configuration holding the defaults.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum D2eStatus d2e_config_new(struct D2eConfig **out);

/**
 * # Safety
 * `config` must come from [`d2e_config_new`] and not be used afterwards. Null is ignored.
 */
void d2e_config_free(struct D2eConfig *config);

/**
 * Set one `key` to the text `value`.
 *
 * # Safety
 * `config` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum D2eStatus d2e_config_set(struct D2eConfig *config, const char *key, const char *value);

/**
 * Apply a flat `key=value` text (one pair per line, `#` comments).
 *
 * # Safety
 * `config` must be a live handle; `body` a NUL-terminated string.
 */
enum D2eStatus d2e_config_apply_text(struct D2eConfig *config, const char *body);

/**
 * Copy the value of `key` into `buf` (NUL-terminated). `needed` receives the
 * length including the terminator; when `capacity` is too small nothing is
 * written and [`D2eStatus::BufferTooSmall`] is returned.
 *
 * # Safety
 * `config` must be a live handle, `key` a NUL-terminated string, `buf` valid
 * for `capacity` bytes (or null with capacity 0) and `needed` null or writable.
 */
enum D2eStatus d2e_config_get(const struct D2eConfig *config,
                              const char *key,
                              char *buf,
                              size_t capacity,
                              size_t *needed);

/**
 * Train under `config`, writing metrics and checkpoints to `out_dir`.
 * `final_return` (optional) receives the mean of the last evaluation,
 * NaN when none ran.
 *
 * # Safety
 * `config` must be a live handle, `out_dir` a NUL-terminated string and
 * `final_return` null or writable.
 */
enum D2eStatus d2e_train(const struct D2eConfig *config, const char *out_dir, double *final_return);

/**
 * Load the agent stored at `checkpoint` by a run of `config`.
 *
 * # Safety
 * `config` must be a live handle, `checkpoint` a NUL-terminated string and
 * `out` writable storage for one handle.
 */
enum D2eStatus d2e_agent_load(const struct D2eConfig *config,
                              const char *checkpoint,
                              struct D2eAgent **out);

/**
 * # Safety
 * `agent` must come from [`d2e_agent_load`] and not be used afterwards. Null is ignored.
 */
void d2e_agent_free(struct D2eAgent *agent);

/**
 * Observation and action widths of the agent's environment.
 *
 * # Safety
 * `agent` must be a live handle; the outputs null or writable.
 */
enum D2eStatus d2e_agent_dims(const struct D2eAgent *agent, size_t *obs_dim, size_t *action_dim);

/**
 * Action for one observation, in the environment's action box. With
 * `explore` nonzero the action is a policy draw, otherwise the greedy one.
 *
 * # Safety
 * `agent` must be a live handle, `obs` valid for `obs_len` reads and
 * `action` valid for `action_len` writes.
 */
enum D2eStatus d2e_agent_act(struct D2eAgent *agent,
                             const double *obs,
                             size_t obs_len,
                             int32_t explore,
                             double *action,
                             size_t action_len);

/**
 * Mean and standard deviation of greedy returns over `episodes` seeded episodes.
 *
 * # Safety
 * `agent` must be a live handle; `mean` and `sd` null or writable.
 */
enum D2eStatus d2e_agent_evaluate(const struct D2eAgent *agent,
                                  size_t episodes,
                                  uint64_t seed,
                                  double *mean,
                                  double *sd);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* D2E_H */
