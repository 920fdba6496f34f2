#ifndef EDAIN_H
#define EDAIN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EdainLayerMode {
  EDAIN_LAYER_MODE_GLOBAL_AWARE = 0,
  EDAIN_LAYER_MODE_LOCAL_AWARE = 1,
} EdainLayerMode;

typedef enum EdainStatus {
  EDAIN_STATUS_OK = 0,
  EDAIN_STATUS_NULL_POINTER = 1,
  EDAIN_STATUS_INVALID_ARGUMENT = 2,
  EDAIN_STATUS_SHAPE = 3,
  EDAIN_STATUS_NUMERICAL = 4,
  EDAIN_STATUS_DOMAIN = 5,
  EDAIN_STATUS_IO = 6,
  EDAIN_STATUS_PARSE = 7,
  EDAIN_STATUS_PANIC = 99,
} EdainStatus;

/*
 A fitted EDAIN-KL bijector.
 */
typedef struct EdainKlHandle EdainKlHandle;

/*
 An EDAIN layer (parameters plus running mean).
 */
typedef struct EdainLayerHandle EdainLayerHandle;

/*
 A fitted static preprocessing pipeline or other checkpoint.
 */
typedef struct EdainPreprocessHandle EdainPreprocessHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *edain_last_error(void);

/*
 Library version as a static nul-terminated string.
 */
const char *edain_version(void);

/*
 Releases a string returned by this library.

 # Safety
 `s` must come from this library and not be freed twice.
 */
void edain_string_free(char *s);

/*
 Creates an EDAIN layer with `d` features at its initial parameters.
 `mode` is an [`EdainLayerMode`] value.

 # Safety
 `out` must be a valid pointer.
 */
enum EdainStatus edain_layer_new(size_t d, uint32_t mode, struct EdainLayerHandle **out);

/*
 Restores a layer (EDAIN or DAIN) from its JSON form.

 # Safety
 `json` must be a nul-terminated string and `out` a valid pointer.
 */
enum EdainStatus edain_layer_from_json(const char *json, struct EdainLayerHandle **out);

/*
 Serialises the layer; free the result with [`edain_string_free`].

 # Safety
 `layer` must be a live handle and `out` a valid pointer.
 */
enum EdainStatus edain_layer_to_json(const struct EdainLayerHandle *layer, char **out);

/*
 Applies the layer to `n x d x T` values. In training mode the running
 mean is updated.

 # Safety
 `x` and `out` must each hold `n * d * t` doubles.
 */
enum EdainStatus edain_layer_forward(struct EdainLayerHandle *layer,
                                     const double *x,
                                     size_t n,
                                     size_t d,
                                     size_t t,
                                     bool training,
                                     double *out);

/*
 # Safety
 `layer` must come from this library and not be freed twice.
 */
void edain_layer_free(struct EdainLayerHandle *layer);

/*
 Fits the EDAIN-KL bijector by maximum likelihood with default settings
 (warm start, Adam, batch 256) for `epochs` epochs.

 # Safety
 `x` must hold `n * d * t` doubles and `out` be a valid pointer.
 */
enum EdainStatus edain_kl_fit(const double *x,
                              size_t n,
                              size_t d,
                              size_t t,
                              size_t epochs,
                              uint64_t seed,
                              struct EdainKlHandle **out);

/*
 Normalising direction. `log_det`, if not null, receives one value per
 series.

 # Safety
 `x` and `out` hold `n * d * t` doubles; `log_det` is null or holds `n`.
 */
enum EdainStatus edain_kl_normalize(const struct EdainKlHandle *kl,
                                    const double *x,
                                    size_t n,
                                    size_t d,
                                    size_t t,
                                    double *out,
                                    double *log_det);

/*
 Generating (inverse) direction; fails with `Domain` when a value falls
 outside the range of the outlier sublayer.

 # Safety
 `z` and `out` hold `n * d * t` doubles.
 */
enum EdainStatus edain_kl_generate(const struct EdainKlHandle *kl,
                                   const double *z,
                                   size_t n,
                                   size_t d,
                                   size_t t,
                                   double *out);

/*
 # Safety
 `kl` must come from this library and not be freed twice.
 */
void edain_kl_free(struct EdainKlHandle *kl);

/*
 Fits a static preprocessing method (`"zscore"`, `"minmax"`,
 `"winsorize+zscore"`, `"zscore+yj"`, `"winsorize+zscore+yj"`,
 `"cdf_inversion"`, `"kdit"`) on training values.

 # Safety
 `method` is a nul-terminated string, `x` holds `n * d * t` doubles and
 `out` is a valid pointer.
 */
enum EdainStatus edain_static_fit(const char *method,
                                  const double *x,
                                  size_t n,
                                  size_t d,
                                  size_t t,
                                  struct EdainPreprocessHandle **out);

/*
 # Safety
 `x` and `out` hold `n * d * t` doubles.
 */
enum EdainStatus edain_static_apply(const struct EdainPreprocessHandle *pre,
                                    const double *x,
                                    size_t n,
                                    size_t d,
                                    size_t t,
                                    double *out);

/*
 # Safety
 `pre` must come from this library and not be freed twice.
 */
void edain_static_free(struct EdainPreprocessHandle *pre);

/*
 Generates the built-in three-feature synthetic dataset with `t` steps.

 # Safety
 `values` holds `n * 3 * t` doubles and `labels` holds `n` entries.
 */
enum EdainStatus edain_synth_generate(size_t n,
                                      size_t t,
                                      uint64_t seed,
                                      double *values,
                                      uint8_t *labels);

/*
 Amex metric `M`. `weights` may be null for uniform weights.

 # Safety
 `predictions` and `labels` hold `n` entries; `weights` is null or holds `n`.
 */
enum EdainStatus edain_amex_metric(const double *predictions,
                                   const uint8_t *labels,
                                   const double *weights,
                                   size_t n,
                                   double *out);

/*
 # Safety
 `predicted` and `truth` hold `n` class indices below `classes`.
 */
enum EdainStatus edain_cohen_kappa(const uint8_t *predicted,
                                   const uint8_t *truth,
                                   size_t n,
                                   size_t classes,
                                   double *out);

/*
 # Safety
 `predicted` and `truth` hold `n` class indices below `classes`.
 */
enum EdainStatus edain_macro_f1(const uint8_t *predicted,
                                const uint8_t *truth,
                                size_t n,
                                size_t classes,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDAIN_H */
