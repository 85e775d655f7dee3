#ifndef RULFORMER_H
#define RULFORMER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum RulStatus {
  RUL_STATUS_OK = 0,
  RUL_STATUS_NULL_POINTER = 1,
  RUL_STATUS_INVALID_ARGUMENT = 2,
  RUL_STATUS_IO = 3,
  RUL_STATUS_FORMAT = 4,
  RUL_STATUS_MODEL = 5,
  RUL_STATUS_PANIC = 6,
} RulStatus;

// Trained RUL model.
typedef struct RulModelHandle RulModelHandle;

// Fitted operating-regime normalizer.
typedef struct RulRegimeHandle RulRegimeHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. The pointer
// stays valid until the next call into this library from the same thread.
const char *rul_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *rul_version(void);

// Load a model checkpoint. On success `*out` owns a handle to release with
// [`rul_model_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum RulStatus rul_model_load(const char *path, struct RulModelHandle **out);

// Release a model handle. Null is ignored.
//
// # Safety
// `handle` must come from [`rul_model_load`] and not be used afterwards.
void rul_model_free(struct RulModelHandle *handle);

// Window length and feature count the model expects.
//
// # Safety
// `handle` must be a live model handle; the out pointers must be writable.
enum RulStatus rul_model_shape(const struct RulModelHandle *handle,
                               size_t *pad_to,
                               size_t *d_features);

// Scaled RUL prediction for one padded window; convert to cycles with
// [`rul_unscale`].
//
// `features` is row-major `pad_to × d_features` and `mask` has `pad_to`
// entries (1 observed, 0 padding).
//
// # Safety
// Pointers must reference buffers of the stated lengths.
enum RulStatus rul_model_predict_window(const struct RulModelHandle *handle,
                                        const double *features,
                                        const uint8_t *mask,
                                        size_t pad_to,
                                        size_t d_features,
                                        double *out);

// Load a regime normalizer saved as JSON.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum RulStatus rul_regime_model_load(const char *path, struct RulRegimeHandle **out);

// Release a regime handle. Null is ignored.
//
// # Safety
// `handle` must come from [`rul_regime_model_load`] and not be used
// afterwards.
void rul_regime_model_free(struct RulRegimeHandle *handle);

// Number of features written by [`rul_regime_model_normalize_row`].
//
// # Safety
// `handle` must be a live regime handle or null (returns 0).
size_t rul_regime_model_n_features(const struct RulRegimeHandle *handle);

// Normalize one raw cycle: 3 operating settings and 21 sensors in, the
// selected sensors standardized by their regime's statistics out.
//
// # Safety
// `settings` holds 3 values, `sensors` 21, `out` at least `out_len`;
// `regime` may be null.
enum RulStatus rul_regime_model_normalize_row(const struct RulRegimeHandle *handle,
                                              const double *settings,
                                              const double *sensors,
                                              double *out,
                                              size_t out_len,
                                              size_t *regime);

// Root-mean-square error of `n` predictions.
//
// # Safety
// `preds` and `truths` hold `n` values; `out` is writable.
enum RulStatus rul_rmse(const double *preds, const double *truths, size_t n, double *out);

// Asymmetric PHM08 score with time constants `a_early` (prediction below
// truth) and `a_late`.
//
// # Safety
// `preds` and `truths` hold `n` values; `out` is writable.
enum RulStatus rul_phm08_score(const double *preds,
                               const double *truths,
                               size_t n,
                               double a_early,
                               double a_late,
                               double *out);

// Training target `min(failure - end, rul_early)`.
//
// # Safety
// `out` must be writable.
enum RulStatus rul_piecewise_rul(uint32_t end_cycle,
                                 uint32_t failure_cycle,
                                 uint32_t rul_early,
                                 uint32_t *out);

// Scaled model output to cycles for a target capped at `rul_early`.
double rul_unscale(double y, uint32_t rul_early);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RULFORMER_H */
