#ifndef CVF_H
#define CVF_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CvfStatus {
  CVF_STATUS_OK = 0,
  CVF_STATUS_NULL_POINTER = 1,
  CVF_STATUS_INVALID_ARGUMENT = 2,
  CVF_STATUS_DIMENSION_MISMATCH = 3,
  CVF_STATUS_IO = 4,
  CVF_STATUS_FORMAT = 5,
  CVF_STATUS_NON_FINITE = 6,
  CVF_STATUS_PANIC = 7,
} CvfStatus;

/**
 * Loaded next-latent model.
 */
typedef struct CvfModel CvfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating if needed. Returns the full message
 * length in bytes excluding the terminator, so callers can size a buffer.
 *
 * # Safety
 * `buf` must be null or point to `buf_len` writable bytes.
 */
size_t cvf_last_error_message(char *buf, size_t buf_len);

/**
 * Writes `g(t) = -t ln t` to `out`. `t` must lie in [0, 1].
 *
 * # Safety
 * `out` must be null or point to a writable `double`.
 */
enum CvfStatus cvf_noise_schedule(double t, double *out);

/**
 * Noisy interpolant between two latents of length `dim` at time `t`,
 * written to `out` (length `dim`).
 *
 * # Safety
 * Each pointer must be valid for `dim` doubles; `out` must not alias inputs.
 */
enum CvfStatus cvf_interpolate(const double *current,
                               const double *next,
                               const double *eps,
                               size_t dim,
                               double t,
                               double *out);

/**
 * Loads a model checkpoint written by the `cvf train` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must point to writable
 * storage for one handle pointer.
 */
enum CvfStatus cvf_model_load(const char *path, struct CvfModel **out);

/**
 * Releases a handle from [`cvf_model_load`]. Null is ignored.
 *
 * # Safety
 * `model` must be null or a live handle not used afterwards.
 */
void cvf_model_free(struct CvfModel *model);

/**
 * Number of latent frames the model conditions on. Returns 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t cvf_model_context_len(const struct CvfModel *model);

/**
 * Latent dimension. Returns 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t cvf_model_latent_dim(const struct CvfModel *model);

/**
 * Samples the latent following `context` (`context_len * latent_dim`
 * doubles, oldest frame first) with `num_steps` sampler steps and writes it
 * to `out` (`latent_dim` doubles). Equal seeds give equal outputs.
 *
 * # Safety
 * `model` must be a live handle and the buffers must have the sizes above.
 */
enum CvfStatus cvf_model_sample_next(const struct CvfModel *model,
                                     const double *context,
                                     size_t context_values,
                                     size_t num_steps,
                                     bool stochastic,
                                     uint64_t seed,
                                     double *out,
                                     size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CVF_H */
