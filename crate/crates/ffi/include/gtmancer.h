#ifndef GTMANCER_H
#define GTMANCER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GtmFusion {
  GTM_FUSION_MEAN = 0,
  GTM_FUSION_SUM = 1,
  GTM_FUSION_CONCAT = 2,
} GtmFusion;

typedef enum GtmOptimizer {
  GTM_OPTIMIZER_GD = 0,
  GTM_OPTIMIZER_ADAM = 1,
} GtmOptimizer;

typedef enum GtmStatus {
  GTM_STATUS_OK = 0,
  GTM_STATUS_NULL_POINTER = 1,
  GTM_STATUS_INVALID_ARGUMENT = 2,
  GTM_STATUS_IO = 3,
  GTM_STATUS_FORMAT = 4,
  GTM_STATUS_NUMERIC = 5,
  GTM_STATUS_PANIC = 6,
} GtmStatus;

// Opaque dataset handle.
typedef struct GtmDataset GtmDataset;

// Opaque trained-model handle.
typedef struct GtmModel GtmModel;

// Training settings. Obtain defaults from [`gtm_config_default`].
typedef struct GtmConfig {
  size_t k;
  double tau;
  double learning_rate;
  size_t epochs;
  double weight_decay;
  double dropout;
  enum GtmFusion fusion;
  enum GtmOptimizer optimizer;
  uint64_t seed;
  double label_ratio;
  size_t latent_dim;
} GtmConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *gtm_last_error(void);

// Library version as a static NUL-terminated string.
const char *gtm_version(void);

struct GtmConfig gtm_config_default(void);

// Loads a dataset from `n_views` view CSV paths and a label CSV.
//
// # Safety
// `view_paths` must point to `n_views` valid NUL-terminated strings,
// `labels_path` must be a valid NUL-terminated string and `out` must be
// writable.
enum GtmStatus gtm_dataset_load(const char *const *view_paths,
                                size_t n_views,
                                const char *labels_path,
                                struct GtmDataset **out);

// Generates a Gaussian-cluster dataset with `dim` features per view.
//
// # Safety
// `out` must be writable.
enum GtmStatus gtm_dataset_synth(size_t n,
                                 size_t m,
                                 size_t classes,
                                 size_t dim,
                                 double separation,
                                 double sigma,
                                 uint64_t seed,
                                 struct GtmDataset **out);

// # Safety
// `ds` must be null or a handle from this library that has not been freed.
void gtm_dataset_free(struct GtmDataset *ds);

// Sample count, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t gtm_dataset_n_samples(const struct GtmDataset *ds);

// # Safety
// `ds` must be null or a live dataset handle.
size_t gtm_dataset_n_views(const struct GtmDataset *ds);

// # Safety
// `ds` must be null or a live dataset handle.
size_t gtm_dataset_n_classes(const struct GtmDataset *ds);

// Copies the integer labels into `labels`, which holds `len` entries.
//
// # Safety
// `ds` must be a live dataset handle and `labels` writable for `len` values.
enum GtmStatus gtm_dataset_labels(const struct GtmDataset *ds, size_t *labels, size_t len);

// Trains a model with the semi-supervised split implied by `config`.
//
// # Safety
// `ds` must be a live dataset handle, `config` readable (null selects the
// defaults) and `out` writable.
enum GtmStatus gtm_model_train(const struct GtmDataset *ds,
                               const struct GtmConfig *config,
                               struct GtmModel **out);

// # Safety
// `model` must be null or a live model handle.
void gtm_model_free(struct GtmModel *model);

// # Safety
// `model` must be a live model handle and `path` a NUL-terminated string.
enum GtmStatus gtm_model_save(const struct GtmModel *model, const char *path);

// Loads a saved model. The loaded model has no training split, so
// evaluation scores every sample.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum GtmStatus gtm_model_load(const char *path, struct GtmModel **out);

// Accuracy and macro-F1 on the held-out samples of the training split, or
// on all samples for a loaded model.
//
// # Safety
// `model` and `ds` must be live handles; `accuracy` and `macro_f1` writable.
enum GtmStatus gtm_model_evaluate(const struct GtmModel *model,
                                  const struct GtmDataset *ds,
                                  double *accuracy,
                                  double *macro_f1);

// Writes the predicted class of every sample into `out`.
//
// # Safety
// `model` and `ds` must be live handles and `out` writable for `len` values.
enum GtmStatus gtm_model_predict(const struct GtmModel *model,
                                 const struct GtmDataset *ds,
                                 size_t *out,
                                 size_t len);

// Largest singular value of a row-major `rows × cols` matrix.
//
// # Safety
// `data` must be readable for `rows * cols` values and `out` writable.
enum GtmStatus gtm_spectral_norm(const double *data,
                                 size_t rows,
                                 size_t cols,
                                 double tol,
                                 size_t max_iter,
                                 double *out);

// Projects a row-major `m × m` matrix onto symmetric matrices with unit
// row sums, writing the result to `out`.
//
// # Safety
// `data` must be readable and `out` writable for `m * m` values.
enum GtmStatus gtm_dykstra_project(const double *data,
                                   size_t m,
                                   double tol,
                                   size_t max_iter,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GTMANCER_H */
