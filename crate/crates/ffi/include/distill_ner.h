#ifndef DISTILL_NER_H
#define DISTILL_NER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported call.
 */
typedef enum DnStatus {
  DN_STATUS_OK = 0,
  DN_STATUS_NULL_POINTER = 1,
  DN_STATUS_INVALID_UTF8 = 2,
  DN_STATUS_INVALID_ARGUMENT = 3,
  DN_STATUS_IO = 4,
  DN_STATUS_FORMAT = 5,
  DN_STATUS_CORRUPTION = 6,
  DN_STATUS_INDEX = 7,
  DN_STATUS_INTERNAL = 8,
  DN_STATUS_PANIC = 9,
} DnStatus;

/**
 * Loaded checkpoint plus cached tag names.
 */
typedef struct DnModel DnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call on the same thread.
 */
const char *dn_last_error(void);

/**
 * Loads a checkpoint. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DnStatus dn_model_load(const char *path, struct DnModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`dn_model_load`] and not be freed twice.
 */
void dn_model_free(struct DnModel *model);

/**
 * Number of tags the model predicts.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum DnStatus dn_model_num_tags(const struct DnModel *model, size_t *out);

/**
 * Label of tag `index`. The string is owned by the handle.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum DnStatus dn_model_tag_name(const struct DnModel *model, size_t index, const char **out);

/**
 * Trainable parameter count.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum DnStatus dn_model_param_count(const struct DnModel *model, size_t *out);

/**
 * Tags one sentence. Writes `len` tag ids to `out_tags`; use
 * [`dn_model_tag_name`] to turn them into labels.
 *
 * # Safety
 * `tokens` must point to `len` NUL-terminated strings and `out_tags` to
 * room for `len` values.
 */
enum DnStatus dn_model_predict(const struct DnModel *model,
                               const char *const *tokens,
                               size_t len,
                               uint32_t *out_tags);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISTILL_NER_H */
