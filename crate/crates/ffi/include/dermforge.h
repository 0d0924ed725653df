#ifndef DERMFORGE_H
#define DERMFORGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DfStatus {
  DF_STATUS_OK = 0,
  DF_STATUS_NULL_POINTER = 1,
  DF_STATUS_INVALID_ARGUMENT = 2,
  DF_STATUS_IO = 3,
  DF_STATUS_DECODE = 4,
  DF_STATUS_CHECKPOINT = 5,
  DF_STATUS_VERSION = 6,
  DF_STATUS_INTERNAL = 7,
} DfStatus;

// Loaded checkpoint. Safe to share between threads for prediction.
typedef struct DfModel DfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread, or an empty string.
// The pointer stays valid until the next dermforge call on this thread.
const char *df_last_error(void);

// Library version as a static NUL-terminated string.
const char *df_version(void);

// Number of output classes (7).
uint32_t df_class_count(void);

// Short diagnosis code for class `index` (e.g. "nv"), or null when out of range.
const char *df_class_code(uint32_t index);

// Human-readable class name, or null when out of range.
const char *df_class_name(uint32_t index);

// Loads a checkpoint file into a new handle written to `*out`.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum DfStatus df_model_load(const char *path, struct DfModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from [`df_model_load`] and not be used afterwards.
void df_model_free(struct DfModel *model);

// Classifies an image file. `probs_out` receives 7 floats and `label_out`
// the argmax class index; either may be null.
//
// # Safety
// `model` must be a live handle, `path` a NUL-terminated string, and
// `probs_out` (if non-null) must have room for 7 floats.
enum DfStatus df_predict_file(const struct DfModel *model,
                              const char *path,
                              float *probs_out,
                              uint32_t *label_out);

// Classifies packed row-major 8-bit RGB pixels of any size.
//
// # Safety
// `pixels` must point to `width * height * 3` bytes; other pointers as for
// [`df_predict_file`].
enum DfStatus df_predict_rgb(const struct DfModel *model,
                             const uint8_t *pixels,
                             uint32_t width,
                             uint32_t height,
                             float *probs_out,
                             uint32_t *label_out);

// Area under the ROC curve of `scores` against binary truth (`positive[i]`
// non-zero means positive). Fails when the truth holds only one class.
//
// # Safety
// `scores` and `positive` must each point to `n` elements; `out` must be valid.
enum DfStatus df_auc(const double *scores, const uint8_t *positive, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DERMFORGE_H */
