#ifndef WOUNDNET_H
#define WOUNDNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WmStatus {
  WM_STATUS_OK = 0,
  WM_STATUS_NULL_POINTER = 1,
  WM_STATUS_INVALID_ARGUMENT = 2,
  WM_STATUS_IO = 3,
  WM_STATUS_DECODE = 4,
  WM_STATUS_MODEL = 5,
  WM_STATUS_DEGENERATE = 6,
  WM_STATUS_BUFFER_TOO_SMALL = 7,
  WM_STATUS_PANIC = 8,
} WmStatus;

/**
 * Opaque model handle.
 */
typedef struct WmModel WmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The last error raised on this thread, or null. The string stays valid
 * until the next call into this library on the same thread.
 */
const char *wm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *wm_version(void);

/**
 * Loads a checkpoint file and self-tests it. On success `*out` receives a
 * handle to release with `wm_model_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum WmStatus wm_model_load(const char *path, struct WmModel **out);

/**
 * Releases a handle from `wm_model_load`. Null is ignored.
 *
 * # Safety
 * `model` must come from `wm_model_load` and not be used afterwards.
 */
void wm_model_free(struct WmModel *model);

/**
 * Number of tasks, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t wm_model_num_tasks(const struct WmModel *model);

/**
 * Copies task `index`'s name, NUL-terminated, into `buf` of `len` bytes.
 *
 * # Safety
 * `model` must be a live handle and `buf` writable for `len` bytes.
 */
enum WmStatus wm_model_task_name(const struct WmModel *model, size_t index, char *buf, size_t len);

/**
 * The stored decision threshold of task `index`.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum WmStatus wm_model_threshold(const struct WmModel *model, size_t index, double *out);

/**
 * Decodes PNG or PPM `data` and writes one positive probability per task
 * to `probs` (capacity `probs_len`).
 *
 * # Safety
 * `data` must be readable for `len` bytes and `probs` writable for
 * `probs_len` doubles.
 */
enum WmStatus wm_model_predict_bytes(const struct WmModel *model,
                                     const uint8_t *data,
                                     size_t len,
                                     double *probs,
                                     size_t probs_len);

/**
 * Like `wm_model_predict_bytes` for an image file.
 *
 * # Safety
 * `path` must be NUL-terminated and `probs` writable for `probs_len` doubles.
 */
enum WmStatus wm_model_predict_file(const struct WmModel *model,
                                    const char *path,
                                    double *probs,
                                    size_t probs_len);

/**
 * Mann-Whitney AUC of `n` scores against binary labels.
 *
 * # Safety
 * `scores` and `labels` must be readable for `n` elements; `out` writable.
 */
enum WmStatus wm_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Cohen's kappa of two binary answer vectors. Returns
 * `WM_STATUS_DEGENERATE` when both raters are constant and agree.
 *
 * # Safety
 * `a` and `b` must be readable for `n` elements; `out` writable.
 */
enum WmStatus wm_cohens_kappa(const uint8_t *a, const uint8_t *b, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WOUNDNET_H */
