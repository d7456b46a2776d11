#ifndef METASHIFT_H
#define METASHIFT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_POINTER = 1,
  MS_STATUS_INVALID_ARGUMENT = 2,
  MS_STATUS_IO = 3,
  MS_STATUS_FORMAT = 4,
  MS_STATUS_CHECKPOINT = 5,
  MS_STATUS_CONFIG = 6,
  MS_STATUS_NUMERIC = 7,
  MS_STATUS_FROZEN = 8,
  MS_STATUS_DATA = 9,
  MS_STATUS_PANIC = 10,
} MsStatus;

// A loaded or generated dataset with its class split.
typedef struct MsDataset MsDataset;

// Frozen extractor, modulation parameters and classifier initialisation.
typedef struct MsModel MsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// Valid until the next call into this library on the same thread.
const char *ms_last_error(void);

// Library version as a static NUL-terminated string.
const char *ms_version(void);

// Builds the dataset described by the config's `dataset` section.
//
// # Safety
// `config` is NULL or a NUL-terminated string; `out` is a valid pointer.
enum MsStatus ms_dataset_new(const char *config, struct MsDataset **out);

// Number of classes in the whole dataset.
//
// # Safety
// `dataset` is NULL or a live handle; `out` is a valid pointer.
enum MsStatus ms_dataset_num_classes(const struct MsDataset *dataset, size_t *out);

// # Safety
// `dataset` is NULL or a handle from `ms_dataset_new`, not used afterwards.
void ms_dataset_free(struct MsDataset *dataset);

// Pretrains an extractor on the train classes and returns an un-meta-trained model.
//
// # Safety
// `dataset` is a live handle; `config` is NULL or a NUL-terminated string;
// `out` is a valid pointer.
enum MsStatus ms_model_pretrain(const struct MsDataset *dataset,
                                const char *config,
                                struct MsModel **out);

// Meta-trains the config's `meta.mode` on the model's frozen extractor,
// replacing the model's meta-learned parameters.
//
// # Safety
// `dataset` and `model` are live handles; `config` is NULL or a NUL-terminated string.
enum MsStatus ms_model_meta_train(const struct MsDataset *dataset,
                                  struct MsModel *model,
                                  const char *config);

// Mean meta-test accuracy and its 95% half-width over `eval.tasks` test episodes.
//
// # Safety
// `dataset` and `model` are live handles; `config` is NULL or a
// NUL-terminated string; `mean` and `half_width` are valid pointers.
enum MsStatus ms_model_meta_test(const struct MsDataset *dataset,
                                 const struct MsModel *model,
                                 const char *config,
                                 double *mean,
                                 double *half_width);

// 1 when the model has been meta-trained, 0 when it is pretrain-only.
//
// # Safety
// `model` is a live handle; `out` is a valid pointer.
enum MsStatus ms_model_is_meta_trained(const struct MsModel *model, int32_t *out);

// Number of meta-learned scalars.
//
// # Safety
// `model` is a live handle; `out` is a valid pointer.
enum MsStatus ms_model_meta_param_count(const struct MsModel *model, size_t *out);

// # Safety
// `model` is a live handle; `path` is a NUL-terminated string.
enum MsStatus ms_model_save(const struct MsModel *model, const char *path);

// # Safety
// `path` is a NUL-terminated string; `out` is a valid pointer.
enum MsStatus ms_model_load(const char *path, struct MsModel **out);

// # Safety
// `model` is NULL or a handle from this library, not used afterwards.
void ms_model_free(struct MsModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METASHIFT_H */
