#ifndef STS_H
#define STS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StsStatus {
  STS_STATUS_OK = 0,
  STS_STATUS_NULL_ARGUMENT = 1,
  STS_STATUS_INVALID_UTF8 = 2,
  STS_STATUS_INVALID_ARGUMENT = 3,
  STS_STATUS_IO = 4,
  STS_STATUS_NOT_FOUND = 5,
  STS_STATUS_CONFLICT = 6,
  STS_STATUS_OUT_OF_RANGE = 7,
  STS_STATUS_CORRUPT = 8,
  STS_STATUS_PANIC = 9,
} StsStatus;

/**
 * A decoded episode file.
 */
typedef struct StsEpisode StsEpisode;

/**
 * An opened workspace with its annotation store and continuation index.
 */
typedef struct StsWorkspace StsWorkspace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * successful call. Valid until the next call into the library on the same
 * thread.
 */
const char *sts_last_error(void);

/**
 * Library version as a static string.
 */
const char *sts_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library that has not
 * been freed yet.
 */
void sts_string_free(char *s);

/**
 * Creates (if needed) and opens the workspace at `path`.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum StsStatus sts_workspace_init(const char *path, struct StsWorkspace **out);

/**
 * Opens an existing workspace.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum StsStatus sts_workspace_open(const char *path, struct StsWorkspace **out);

/**
 * # Safety
 * `ws` must be null or a handle from [`sts_workspace_open`] or
 * [`sts_workspace_init`] that has not been freed yet.
 */
void sts_workspace_free(struct StsWorkspace *ws);

/**
 * Number of continuations in the workspace index.
 *
 * # Safety
 * `ws` must be a live handle; `out` must be writable.
 */
enum StsStatus sts_workspace_continuation_count(const struct StsWorkspace *ws, size_t *out);

/**
 * Writes the annotator's pending queue as a JSON array of ids.
 *
 * # Safety
 * `ws` must be a live handle, `annotator` a valid C string and `out_json`
 * writable.
 */
enum StsStatus sts_workspace_pending(const struct StsWorkspace *ws,
                                     const char *annotator,
                                     char **out_json);

/**
 * Ingests one annotation given as JSON
 * `{continuation_id, outcome, marker_tick, annotator_id}`. `out_created`
 * receives 1 for a new record and 0 if an identical one was stored.
 *
 * # Safety
 * `ws` must be a live handle, `json` a valid C string and `out_created`
 * null or writable.
 */
enum StsStatus sts_workspace_ingest(const struct StsWorkspace *ws,
                                    const char *json,
                                    int32_t *out_created);

/**
 * Score report for `agent` on suite `suite` as JSON. `version` may be
 * null to use the suite's own version.
 *
 * # Safety
 * `ws` must be a live handle, `suite` and `agent` valid C strings,
 * `version` null or a valid C string, and `out_json` writable.
 */
enum StsStatus sts_workspace_report(const struct StsWorkspace *ws,
                                    const char *suite,
                                    const char *agent,
                                    const char *version,
                                    char **out_json);

/**
 * Loads and checksum-verifies an episode file.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum StsStatus sts_episode_load(const char *path, struct StsEpisode **out);

/**
 * # Safety
 * `ep` must be null or a live handle from [`sts_episode_load`].
 */
void sts_episode_free(struct StsEpisode *ep);

/**
 * Number of steps in the episode.
 *
 * # Safety
 * `ep` must be a live handle; `out` must be writable.
 */
enum StsStatus sts_episode_length(const struct StsEpisode *ep, uint64_t *out);

/**
 * The episode id as a new string.
 *
 * # Safety
 * `ep` must be a live handle; `out` must be writable.
 */
enum StsStatus sts_episode_id(const struct StsEpisode *ep, char **out);

/**
 * Replays the episode from its initial config and checks the final state
 * hash. Returns `STS_STATUS_CORRUPT` on divergence.
 *
 * # Safety
 * `ep` must be a live handle.
 */
enum StsStatus sts_episode_verify(const struct StsEpisode *ep);

/**
 * Spearman correlation of two equally long arrays with its two-sided
 * p-value.
 *
 * # Safety
 * `xs` and `ys` must point to `n` readable doubles; `out_r` and `out_p`
 * must be writable.
 */
enum StsStatus sts_spearman(const double *xs,
                            const double *ys,
                            size_t n,
                            double *out_r,
                            double *out_p);

/**
 * Balanced accuracy of a confusion matrix with success as the positive
 * class. With one class absent the other class's rate is returned; an
 * all-zero matrix fails with `STS_STATUS_INVALID_ARGUMENT`.
 *
 * # Safety
 * `out` must be writable.
 */
enum StsStatus sts_balanced_accuracy(uint64_t tp,
                                     uint64_t fn_,
                                     uint64_t fp,
                                     uint64_t tn,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STS_H */
