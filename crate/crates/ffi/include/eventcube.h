#ifndef EVENTCUBE_H
#define EVENTCUBE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EcStatus {
  EC_STATUS_OK = 0,
  EC_STATUS_NULL_POINTER = 1,
  EC_STATUS_INVALID_ARGUMENT = 2,
  EC_STATUS_IO = 3,
  /**
   * Malformed file contents (bad magic, version, truncation, bad rows).
   */
  EC_STATUS_FORMAT = 4,
  /**
   * Tensor shape or kind does not fit the model.
   */
  EC_STATUS_ARCH_MISMATCH = 5,
  /**
   * Input data violates an invariant (too few events, non-positive energies, ...).
   */
  EC_STATUS_INVALID_DATA = 6,
  /**
   * Output buffer smaller than required.
   */
  EC_STATUS_BUFFER_TOO_SMALL = 7,
  EC_STATUS_PANIC = 8,
} EcStatus;

/**
 * A trained sparse autoencoder loaded from a checkpoint.
 */
typedef struct EcModel EcModel;

/**
 * An event series: timestamps with one positive modality value each.
 */
typedef struct EcSeries EcSeries;

/**
 * An E–t map or E–t–dt cube.
 */
typedef struct EcTensor EcTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ec_version(void);

/**
 * Message for the last failing call on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ec_last_error_message(void);

/**
 * Build a series from `n` timestamps and modality values. Events are sorted by
 * time; at least two events with positive modality are required.
 *
 * # Safety
 * `timestamps` and `modality` must point to `n` readable doubles, `series_id`
 * to a NUL-terminated string, and `out` to writable storage for one pointer.
 */
enum EcStatus ec_series_new(const double *timestamps,
                            const double *modality,
                            size_t n,
                            const char *series_id,
                            struct EcSeries **out);

/**
 * Load a `time,energy` CSV; the series id is the file stem.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable storage for one pointer.
 */
enum EcStatus ec_series_load_csv(const char *path, struct EcSeries **out);

/**
 * Number of events, or 0 for a null handle.
 *
 * # Safety
 * `series` must be null or a live handle from this library.
 */
size_t ec_series_len(const struct EcSeries *series);

/**
 * # Safety
 * `series` must be null or a handle from this library that is not used afterwards.
 */
void ec_series_free(struct EcSeries *series);

/**
 * Bin a series with log10 modality, per-series bounds and unit-sum scaling.
 * `n_dtau == 0` produces an E–t map, otherwise an E–t–dt cube.
 *
 * # Safety
 * `series` must be a live handle and `out` writable storage for one pointer.
 */
enum EcStatus ec_tensorize(const struct EcSeries *series,
                           size_t n_tau,
                           size_t n_eps,
                           size_t n_dtau,
                           struct EcTensor **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable storage for one pointer.
 */
enum EcStatus ec_tensor_load(const char *path, struct EcTensor **out);

/**
 * Write a tensor file; values are stored as single precision.
 *
 * # Safety
 * `tensor` must be a live handle and `path` a NUL-terminated string.
 */
enum EcStatus ec_tensor_save(const struct EcTensor *tensor, const char *path);

/**
 * 2 for maps, 3 for cubes, 0 for a null handle.
 *
 * # Safety
 * `tensor` must be null or a live handle.
 */
size_t ec_tensor_ndim(const struct EcTensor *tensor);

/**
 * Total number of cells, 0 for a null handle.
 *
 * # Safety
 * `tensor` must be null or a live handle.
 */
size_t ec_tensor_len(const struct EcTensor *tensor);

/**
 * Copy the dimensions (time bins first) into `dims`, which holds `capacity` entries.
 *
 * # Safety
 * `tensor` must be a live handle and `dims` must point to `capacity` writable `size_t`.
 */
enum EcStatus ec_tensor_dims(const struct EcTensor *tensor, size_t *dims, size_t capacity);

/**
 * Copy the row-major cell values into `values`, which holds `capacity` doubles.
 *
 * # Safety
 * `tensor` must be a live handle and `values` must point to `capacity` writable doubles.
 */
enum EcStatus ec_tensor_values(const struct EcTensor *tensor, double *values, size_t capacity);

/**
 * 1 for a cube, 0 for a map or a null handle.
 *
 * # Safety
 * `tensor` must be null or a live handle.
 */
int32_t ec_tensor_is_cube(const struct EcTensor *tensor);

/**
 * # Safety
 * `tensor` must be null or a handle from this library that is not used afterwards.
 */
void ec_tensor_free(struct EcTensor *tensor);

/**
 * Load a model from a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable storage for one pointer.
 */
enum EcStatus ec_model_load(const char *path, struct EcModel **out);

/**
 * Latent dimension, 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ec_model_latent_dim(const struct EcModel *model);

/**
 * Encode one tensor into `latent`, which holds `capacity` doubles. Models are
 * read-only here, so one handle may be shared across threads.
 *
 * # Safety
 * `model` and `tensor` must be live handles and `latent` must point to
 * `capacity` writable doubles.
 */
enum EcStatus ec_model_encode(const struct EcModel *model,
                              const struct EcTensor *tensor,
                              double *latent,
                              size_t capacity);

/**
 * # Safety
 * `model` must be null or a handle from this library that is not used afterwards.
 */
void ec_model_free(struct EcModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVENTCUBE_H */
