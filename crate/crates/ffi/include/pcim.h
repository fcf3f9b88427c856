#ifndef PCIM_H
#define PCIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PcimMethod {
  PCIM_METHOD_PCIM = 0,
  PCIM_METHOD_SALIENCY = 1,
  PCIM_METHOD_RISE = 2,
  PCIM_METHOD_GRAD_CAM = 3,
  PCIM_METHOD_GRAD_CAM_PP = 4,
  PCIM_METHOD_INT_GRADS = 5,
  PCIM_METHOD_RANDOM = 6,
} PcimMethod;

typedef enum PcimStatus {
  PCIM_STATUS_OK = 0,
  PCIM_STATUS_NULL_POINTER = 1,
  PCIM_STATUS_INVALID_ARGUMENT = 2,
  PCIM_STATUS_DIMENSION = 3,
  PCIM_STATUS_NUMERIC = 4,
  PCIM_STATUS_STATE = 5,
  PCIM_STATUS_DATA = 6,
  PCIM_STATUS_FORMAT = 7,
  PCIM_STATUS_IO = 8,
  PCIM_STATUS_UNDEFINED_METRIC = 9,
  PCIM_STATUS_PANIC = 10,
} PcimStatus;

// A frozen classifier.
typedef struct PcimModel PcimModel;

// Per-method settings; start from `pcim_attribution_options_default`.
typedef struct PcimAttributionOptions {
  uint32_t pcim_steps;
  float pcim_learning_rate;
  float pcim_momentum;
  uint32_t ig_steps;
  uint32_t rise_masks;
  uint64_t rise_seed;
  uint64_t random_seed;
} PcimAttributionOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next call into this library on the same thread.
const char *pcim_last_error_message(void);

struct PcimAttributionOptions pcim_attribution_options_default(void);

// Loads a checkpoint directory and freezes the network.
//
// # Safety
// `dir` must be a nul-terminated string and `out` a valid pointer.
enum PcimStatus pcim_model_load(const char *dir, struct PcimModel **out);

// # Safety
// `model` must come from `pcim_model_load` and not be freed twice. Null is ignored.
void pcim_model_free(struct PcimModel *model);

// # Safety
// All pointers must be valid.
enum PcimStatus pcim_model_info(const struct PcimModel *model,
                                size_t *height,
                                size_t *width,
                                size_t *num_classes);

// Writes the 64-character hex SHA-256 of the weights and a nul into `buf`,
// which must hold at least 65 bytes.
//
// # Safety
// `buf` must be writable for `len` bytes.
enum PcimStatus pcim_model_checksum(const struct PcimModel *model, char *buf, size_t len);

// Class probabilities of one image into `probs` (`num_classes` values).
//
// # Safety
// `pixels` must hold `pixel_count` floats and `probs` `prob_count` floats.
enum PcimStatus pcim_predict(const struct PcimModel *model,
                             const float *pixels,
                             size_t pixel_count,
                             float *probs,
                             size_t prob_count);

// Attribution map of `class` for one image, written to `map` (`height * width` values).
// `image_id` seeds the random control and names the image in errors.
// `options` may be null for the defaults.
//
// # Safety
// Buffers must hold the stated counts; strings must be nul-terminated.
enum PcimStatus pcim_attribute(const struct PcimModel *model,
                               enum PcimMethod method,
                               const char *image_id,
                               const float *pixels,
                               size_t pixel_count,
                               size_t class_index,
                               const struct PcimAttributionOptions *options,
                               float *map,
                               size_t map_count);

// Share of positive attribution inside the mask (non-zero bytes).
// Returns `PCIM_STATUS_UNDEFINED_METRIC` when the map has no positive value.
//
// # Safety
// `map` and `mask` must hold `height * width` values.
enum PcimStatus pcim_mass_accuracy(const float *map,
                                   const uint8_t *mask,
                                   size_t height,
                                   size_t width,
                                   double *out);

// Share of the `k` highest-attributed pixels inside the mask, `k` = mask size.
//
// # Safety
// `map` and `mask` must hold `height * width` values.
enum PcimStatus pcim_rank_accuracy(const float *map,
                                   const uint8_t *mask,
                                   size_t height,
                                   size_t width,
                                   double *out);

// Mean SSIM of two maps as given (no normalization). Both sides need at least 7 pixels.
//
// # Safety
// `a` and `b` must hold `height * width` values.
enum PcimStatus pcim_ssim(const float *a, const float *b, size_t height, size_t width, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCIM_H */
