#ifndef MCV_H
#define MCV_H

/* Generated by cbindgen; edit the Rust sources instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum McvStatus {
  MCV_STATUS_OK = 0,
  MCV_STATUS_NULL_POINTER = 1,
  MCV_STATUS_INVALID_INPUT = 2,
  MCV_STATUS_DIMENSION_MISMATCH = 3,
  MCV_STATUS_INSUFFICIENT_DATA = 4,
  MCV_STATUS_NOT_CALIBRATED = 5,
  MCV_STATUS_NUMERICAL = 6,
  MCV_STATUS_CONFIG = 7,
  MCV_STATUS_IO = 8,
  MCV_STATUS_PANIC = 99,
} McvStatus;

typedef enum McvMethod {
  MCV_METHOD_SPLIT = 0,
  MCV_METHOD_MDA_EXACT = 1,
  MCV_METHOD_MDA_NESTED = 2,
  MCV_METHOD_MDA_NESTED_STAR = 3,
  MCV_METHOD_WEIGHTED = 4,
  MCV_METHOD_ARC = 5,
  MCV_METHOD_UNCORRECTED = 6,
} McvMethod;

/**
 * Opaque handle.
 */
typedef struct McvPipeline McvPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Fits the imputer, quantile band and ratio classifier on `n` training rows
 * of dimension `d`. Writes a new handle to `out`; free it with
 * `mcv_pipeline_free`.
 *
 * # Safety
 * `x` must point to `n * d` doubles, `y` to `n` doubles and `out` to
 * writable storage for one pointer.
 */
enum McvStatus mcv_pipeline_fit(const double *x,
                                const double *y,
                                size_t n,
                                size_t d,
                                double alpha,
                                uint64_t seed,
                                struct McvPipeline **out);

/**
 * Calibrates on `n` rows; replaces any previous calibration.
 *
 * # Safety
 * `p` must come from `mcv_pipeline_fit`; `x` must point to `n * d` doubles
 * and `y` to `n` doubles.
 */
enum McvStatus mcv_pipeline_calibrate(struct McvPipeline *p,
                                      const double *x,
                                      const double *y,
                                      size_t n,
                                      size_t d);

/**
 * Prediction interval for one row; NaN cells are the test mask. Infinite
 * bounds are reported as +-INFINITY, an empty set as
 * lower = +INFINITY, upper = -INFINITY.
 *
 * # Safety
 * `p` must come from `mcv_pipeline_fit`; `x` must point to `d` doubles;
 * `lower` and `upper` must be writable.
 */
enum McvStatus mcv_pipeline_predict(const struct McvPipeline *p,
                                    const double *x,
                                    size_t d,
                                    enum McvMethod method,
                                    double *lower,
                                    double *upper);

/**
 * Number of covariates the pipeline was fitted on, or 0 for a null handle.
 *
 * # Safety
 * `p` must be null or come from `mcv_pipeline_fit`.
 */
size_t mcv_pipeline_dim(const struct McvPipeline *p);

/**
 * # Safety
 * `p` must be null or come from `mcv_pipeline_fit`, and not be used again.
 */
void mcv_pipeline_free(struct McvPipeline *p);

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next `mcv_*` call on the same thread.
 */
const char *mcv_last_error_message(void);

/**
 * Static version string.
 */
const char *mcv_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCV_H */
