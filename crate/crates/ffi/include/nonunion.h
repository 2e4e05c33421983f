#ifndef NONUNION_H
#define NONUNION_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum NuStatus {
  NU_STATUS_OK = 0,
  // A required pointer argument was null.
  NU_STATUS_NULL_POINTER = 1,
  // Bad argument or configuration (invalid UTF-8, out-of-range value, bad JSON).
  NU_STATUS_INVALID_ARGUMENT = 2,
  // The data cannot support the request (I/O, parsing, single class, ...).
  NU_STATUS_DATA_ERROR = 3,
  // Numerical failure while training or computing.
  NU_STATUS_NUMERICAL_ERROR = 4,
  // The requested quantity is undefined (0/0); the output is set to NaN.
  NU_STATUS_UNDEFINED = 5,
  // A Rust panic was caught at the boundary.
  NU_STATUS_INTERNAL = 6,
} NuStatus;

typedef enum NuModelKind {
  NU_MODEL_KIND_LOGISTIC = 0,
  NU_MODEL_KIND_SVM = 1,
  NU_MODEL_KIND_GBT = 2,
  NU_MODEL_KIND_CONSTANT = 3,
} NuModelKind;

// Opaque cohort handle.
typedef struct NuDataset NuDataset;

// Opaque trained-model handle.
typedef struct NuModel NuModel;

typedef struct NuConfusion {
  uint64_t true_pos;
  uint64_t false_pos;
  uint64_t true_neg;
  uint64_t false_neg;
  double threshold;
} NuConfusion;

// Metrics of a confusion matrix; NaN marks an undefined value.
typedef struct NuMetrics {
  double upm;
  double mcc;
  double sensitivity;
  double specificity;
  double precision;
  double npv;
} NuMetrics;

typedef struct NuWilcoxon {
  size_t n_pairs;
  size_t n_nonzero;
  double w_plus;
  double w_minus;
  double z;
  double p_value;
  // NaN when the exact distribution was not computed.
  double p_exact;
  double effect_size;
  // True when `p_value` is the exact p-value.
  bool exact;
} NuWilcoxon;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next call into the library on the same thread.
const char *nu_last_error(void);

// Library version as a static NUL-terminated string.
const char *nu_version(void);

// Generate a synthetic cohort of `n` patients with the default generator.
//
// # Safety
// `out` must be valid for a pointer write.
enum NuStatus nu_dataset_synthetic(size_t n, uint64_t seed, struct NuDataset **out);

// Load a cohort CSV described by a schema JSON file.
//
// # Safety
// Paths must be NUL-terminated strings; `out` must be valid for a pointer write.
enum NuStatus nu_dataset_load_csv(const char *csv_path,
                                  const char *schema_path,
                                  struct NuDataset **out);

// # Safety
// `dataset` must be a live handle; `out` must be writable.
enum NuStatus nu_dataset_rows(const struct NuDataset *dataset, size_t *out);

// Copy the outcome labels (1 = failed healing) into `out[0..len]`; `len` must
// equal the row count.
//
// # Safety
// `dataset` must be a live handle; `out` must hold `len` bytes.
enum NuStatus nu_dataset_outcomes(const struct NuDataset *dataset, uint8_t *out, size_t len);

// Release a dataset handle. Null is ignored.
//
// # Safety
// `dataset` must come from this library and not be freed twice.
void nu_dataset_free(struct NuDataset *dataset);

// Fit the preprocessing and a classifier of `kind` on `dataset`.
//
// `config_json` holds model hyperparameters (the `models` section of an
// experiment config) or is null for defaults. `seed` is the master seed the
// SVM calibration folds are derived from.
//
// # Safety
// `dataset` must be a live handle, `config_json` null or NUL-terminated, `out` writable.
enum NuStatus nu_model_train(const struct NuDataset *dataset,
                             enum NuModelKind kind,
                             const char *config_json,
                             uint64_t seed,
                             struct NuModel **out);

// # Safety
// `model` must be a live handle; `out` must be writable.
enum NuStatus nu_model_kind(const struct NuModel *model, enum NuModelKind *out);

// Predicted probabilities of failed healing for every row of `dataset`;
// `len` must equal the row count.
//
// # Safety
// Handles must be live; `out` must hold `len` doubles.
enum NuStatus nu_model_predict(const struct NuModel *model,
                               const struct NuDataset *dataset,
                               double *out,
                               size_t len);

// Write the model artifact as JSON.
//
// # Safety
// `model` must be a live handle; `path` NUL-terminated.
enum NuStatus nu_model_save(const struct NuModel *model, const char *path);

// # Safety
// `path` must be NUL-terminated; `out` writable.
enum NuStatus nu_model_load(const char *path, struct NuModel **out);

// Release a model handle. Null is ignored.
//
// # Safety
// `model` must come from this library and not be freed twice.
void nu_model_free(struct NuModel *model);

// Confusion matrix with the rule "positive iff p > threshold".
//
// # Safety
// `labels` and `probs` must hold `n` values; `out` writable.
enum NuStatus nu_confusion(const uint8_t *labels,
                           const double *probs,
                           size_t n,
                           double threshold,
                           struct NuConfusion *out);

// UPM of a confusion matrix. Returns `Undefined` (and writes NaN) when its
// denominator is zero.
//
// # Safety
// `cm` must be readable, `out` writable.
enum NuStatus nu_upm(const struct NuConfusion *cm, double *out);

// UPM and companion metrics; undefined entries are NaN.
//
// # Safety
// `cm` must be readable, `out` writable.
enum NuStatus nu_metrics(const struct NuConfusion *cm, struct NuMetrics *out);

// Two-sided Wilcoxon signed-rank test on paired samples `a` and `b`.
//
// # Safety
// `a` and `b` must hold `n` values; `out` writable.
enum NuStatus nu_wilcoxon(const double *a, const double *b, size_t n, struct NuWilcoxon *out);

// LOWESS smoothing of `y` against `x`, evaluated at every `x`.
//
// # Safety
// `x`, `y` and `out` must hold `n` values.
enum NuStatus nu_lowess(const double *x,
                        const double *y,
                        size_t n,
                        double frac,
                        size_t robust_iters,
                        double *out);

// Calibration odds ratio: odds of the mean prediction over odds of the
// observed incidence.
//
// # Safety
// `labels` and `probs` must hold `n` values; `out` writable.
enum NuStatus nu_calibration_odds_ratio(const uint8_t *labels,
                                        const double *probs,
                                        size_t n,
                                        double *out);

// Largest threshold whose sensitivity still reaches `floor`.
//
// # Safety
// `labels` and `probs` must hold `n` values; `out` writable.
enum NuStatus nu_threshold_for_sensitivity(const uint8_t *labels,
                                           const double *probs,
                                           size_t n,
                                           double floor,
                                           double *out);

// Smallest threshold whose specificity reaches `floor`.
//
// # Safety
// `labels` and `probs` must hold `n` values; `out` writable.
enum NuStatus nu_threshold_for_specificity(const uint8_t *labels,
                                           const double *probs,
                                           size_t n,
                                           double floor,
                                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NONUNION_H */
