#ifndef GENSTEG_H
#define GENSTEG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Values 2 to 11 match the CLI exit codes.
typedef enum GsnStatus {
  GSN_STATUS_OK = 0,
  GSN_STATUS_NULL_POINTER = 1,
  GSN_STATUS_INVALID_ARGUMENT = 2,
  GSN_STATUS_SHAPE = 3,
  GSN_STATUS_CAPACITY = 4,
  GSN_STATUS_CONFIG = 5,
  GSN_STATUS_IO = 6,
  GSN_STATUS_IMAGE = 7,
  GSN_STATUS_DATASET = 8,
  GSN_STATUS_CHECKPOINT = 9,
  GSN_STATUS_NON_FINITE = 10,
  GSN_STATUS_GRAD_CHECK = 11,
  GSN_STATUS_BUFFER_TOO_SMALL = 12,
  GSN_STATUS_PANIC = 13,
} GsnStatus;

// Generator and extractor loaded from a checkpoint. Opaque to C.
typedef struct GsnModel GsnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *gsn_last_error_message(void);

// Load a checkpoint. On success `*out` owns a model that must be released
// with [`gsn_model_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum GsnStatus gsn_model_load(const char *path, struct GsnModel **out);

// Release a model. Null is ignored.
//
// # Safety
// `model` must come from [`gsn_model_load`] and not be used afterwards.
void gsn_model_free(struct GsnModel *model);

// Image side length in pixels, 0 for a null model.
//
// # Safety
// `model` must be null or a live model.
size_t gsn_model_resolution(const struct GsnModel *model);

// Bits carried per image, 0 for a null model.
//
// # Safety
// `model` must be null or a live model.
size_t gsn_model_capacity(const struct GsnModel *model);

// Bytes of RGB output per image (side * side * 3), 0 for a null model.
//
// # Safety
// `model` must be null or a live model.
size_t gsn_model_image_bytes(const struct GsnModel *model);

// Generate a cover image into `rgb_out`. The same `(seed, index)` always
// gives the same image.
//
// # Safety
// `model` must be a live model and `rgb_out` writable for `rgb_len` bytes.
enum GsnStatus gsn_generate_cover(const struct GsnModel *model,
                                  uint64_t seed,
                                  uint64_t index,
                                  uint8_t *rgb_out,
                                  size_t rgb_len);

// Generate a stego image carrying the first `n_bits` bits of `payload`,
// zero-padded to capacity.
//
// # Safety
// `model` must be a live model, `payload` readable for `ceil(n_bits / 8)`
// bytes and `rgb_out` writable for `rgb_len` bytes.
enum GsnStatus gsn_generate_stego(const struct GsnModel *model,
                                  const uint8_t *payload,
                                  size_t n_bits,
                                  uint64_t seed,
                                  uint64_t index,
                                  uint8_t *rgb_out,
                                  size_t rgb_len);

// Recover `n_bits` bits from an RGB image into `bits_out`, packed MSB first.
//
// # Safety
// `model` must be a live model, `rgb` readable for `rgb_len` bytes and
// `bits_out` writable for `bits_len` bytes.
enum GsnStatus gsn_extract(const struct GsnModel *model,
                           const uint8_t *rgb,
                           size_t rgb_len,
                           size_t n_bits,
                           uint8_t *bits_out,
                           size_t bits_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GENSTEG_H */
