#ifndef FIXCLR_H
#define FIXCLR_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FixclrVariant {
  FIXCLR_VARIANT_REPEL_ONLY = 0,
  FIXCLR_VARIANT_WITH_POSITIVES = 1,
} FixclrVariant;

typedef enum FixclrSimilarity {
  FIXCLR_SIMILARITY_CENTROID = 0,
  FIXCLR_SIMILARITY_MEAN_PAIRWISE = 1,
} FixclrSimilarity;

// Result of every fallible call. The first values match the CLI exit codes.
typedef enum FixclrStatus {
  FIXCLR_STATUS_OK = 0,
  FIXCLR_STATUS_CONFIG = 3,
  FIXCLR_STATUS_DATA = 4,
  FIXCLR_STATUS_NUMERIC = 5,
  FIXCLR_STATUS_IO = 6,
  FIXCLR_STATUS_DOMAIN = 7,
  FIXCLR_STATUS_NULL_POINTER = 8,
  FIXCLR_STATUS_INVALID_ARGUMENT = 9,
  FIXCLR_STATUS_PANIC = 10,
} FixclrStatus;

// Labeled representation batch handle, the input of the loss.
typedef struct FixclrBatch FixclrBatch;

// Multi-domain dataset handle.
typedef struct FixclrDataset FixclrDataset;

// Model handle (encoder, projection head, classifier).
typedef struct FixclrModel FixclrModel;

typedef struct FixclrLossConfig {
  double temperature;
  double loss_weight;
  enum FixclrVariant variant;
  enum FixclrSimilarity similarity;
} FixclrLossConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *fixclr_version(void);

// Message of the last failure on this thread, or NULL if none. The
// pointer stays valid until the next failing call on this thread.
const char *fixclr_last_error(void);

// Default loss settings: temperature 0.5, weight 1, repel-only, centroid.
struct FixclrLossConfig fixclr_loss_config_default(void);

// Cosine-annealed learning rate at `step` of `total_steps`.
//
// # Safety
// `out` must be writable.
enum FixclrStatus fixclr_cosine_lr(size_t step, size_t total_steps, double base_lr, double *out);

// The acceptance benchmark dataset (4 domains, 5 classes, 16 features).
//
// # Safety
// `out` must be writable; on success it receives a handle to free with
// [`fixclr_dataset_free`].
enum FixclrStatus fixclr_dataset_generate_benchmark(uint64_t seed, struct FixclrDataset **out);

// Synthetic dataset from a JSON-encoded synthetic config (same keys as the
// `[dataset]` section of an experiment config, without `source`).
//
// # Safety
// `config_json` must be a NUL-terminated string and `out` writable.
enum FixclrStatus fixclr_dataset_generate(const char *config_json, struct FixclrDataset **out);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum FixclrStatus fixclr_dataset_load(const char *path, struct FixclrDataset **out);

// # Safety
// `ds` must be a live dataset handle and `path` a NUL-terminated string.
enum FixclrStatus fixclr_dataset_save(const struct FixclrDataset *ds, const char *path);

// Number of samples, or 0 for NULL.
//
// # Safety
// `ds` must be NULL or a live dataset handle.
size_t fixclr_dataset_len(const struct FixclrDataset *ds);

// # Safety
// `ds` must be NULL or a live dataset handle.
size_t fixclr_dataset_num_domains(const struct FixclrDataset *ds);

// # Safety
// `ds` must be NULL or a live dataset handle.
size_t fixclr_dataset_num_classes(const struct FixclrDataset *ds);

// # Safety
// `ds` must be NULL or a live dataset handle.
size_t fixclr_dataset_feature_dim(const struct FixclrDataset *ds);

// Copies sample `index`: `feature_dim` values into `features`, plus its
// domain and class. Any of the three outputs may be NULL.
//
// # Safety
// `ds` must be a live dataset handle; non-NULL outputs must be writable
// (`features` for `feature_dim` values).
enum FixclrStatus fixclr_dataset_sample(const struct FixclrDataset *ds,
                                        size_t index,
                                        double *features,
                                        size_t *domain_id,
                                        size_t *class_id);

// # Safety
// `ds` must be NULL or a handle not yet freed.
void fixclr_dataset_free(struct FixclrDataset *ds);

// Batch of `n` unit vectors of length `dim` (row-major), with per-row
// domain and class ids. `eligible` may be NULL (all rows eligible);
// otherwise nonzero bytes mark eligible rows.
//
// # Safety
// `vectors` must hold `n * dim` values, `domain_ids` and `class_ids` `n`
// values each, `eligible` NULL or `n` bytes; `out` must be writable.
enum FixclrStatus fixclr_batch_new(const double *vectors,
                                   size_t n,
                                   size_t dim,
                                   const size_t *domain_ids,
                                   const size_t *class_ids,
                                   const uint8_t *eligible,
                                   struct FixclrBatch **out);

// # Safety
// `batch` must be NULL or a live batch handle.
size_t fixclr_batch_len(const struct FixclrBatch *batch);

// # Safety
// `batch` must be NULL or a handle not yet freed.
void fixclr_batch_free(struct FixclrBatch *batch);

// Loss value and, when `grad` is non-NULL, its gradient with respect to
// the batch vectors (`n * dim` values, row-major). `config` may be NULL
// for the defaults. `skipped` (optional) is set to 1 when the batch had
// fewer than two eligible classes, in which case the value is 0.
//
// # Safety
// `batch` must be a live handle, `config` NULL or readable, `value`
// writable, `grad` NULL or writable for `n * dim` values, `skipped` NULL
// or writable.
enum FixclrStatus fixclr_loss(const struct FixclrBatch *batch,
                              const struct FixclrLossConfig *config,
                              double *value,
                              double *grad,
                              uint8_t *skipped);

// Reference value of the loss computed by direct enumeration (slow; at
// most 512 rows).
//
// # Safety
// As for [`fixclr_loss`].
enum FixclrStatus fixclr_loss_oracle(const struct FixclrBatch *batch,
                                     const struct FixclrLossConfig *config,
                                     double *value);

// Freshly initialized model with the default architecture.
//
// # Safety
// `out` must be writable.
enum FixclrStatus fixclr_model_new(size_t input_dim,
                                   size_t num_classes,
                                   uint64_t seed,
                                   struct FixclrModel **out);

// Model from a training checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum FixclrStatus fixclr_model_load(const char *path, struct FixclrModel **out);

// # Safety
// `model` must be NULL or a live model handle.
size_t fixclr_model_input_dim(const struct FixclrModel *model);

// # Safety
// `model` must be NULL or a live model handle.
size_t fixclr_model_num_classes(const struct FixclrModel *model);

// # Safety
// `model` must be NULL or a live model handle.
size_t fixclr_model_projection_dim(const struct FixclrModel *model);

// Forward pass over `n` inputs of length `dim` (row-major). Writes
// `n * num_classes` logits and, when `projected` is non-NULL,
// `n * projection_dim` unit-norm projections.
//
// # Safety
// `model` must be a live handle, `inputs` hold `n * dim` values, `logits`
// be writable for `n * num_classes` values and `projected` NULL or
// writable for `n * projection_dim` values.
enum FixclrStatus fixclr_model_forward(const struct FixclrModel *model,
                                       const double *inputs,
                                       size_t n,
                                       size_t dim,
                                       double *logits,
                                       double *projected);

// # Safety
// `model` must be NULL or a handle not yet freed.
void fixclr_model_free(struct FixclrModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FIXCLR_H */
