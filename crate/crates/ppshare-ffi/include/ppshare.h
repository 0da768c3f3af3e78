/* C interface for the ppshare prototype-sharing classifier. */

#ifndef PPSHARE_H
#define PPSHARE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a C API call. Anything but `OK` leaves a message in
 * `ppshare_last_error`.
 */
typedef enum {
  PPSHARE_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  PPSHARE_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  PPSHARE_STATUS_INVALID_UTF8 = 2,
  PPSHARE_STATUS_IO = 3,
  /**
   * JSON could not be parsed or serialized.
   */
  PPSHARE_STATUS_JSON = 4,
  /**
   * A file did not look like the expected format.
   */
  PPSHARE_STATUS_FORMAT = 5,
  /**
   * A file matched the format but its payload was inconsistent.
   */
  PPSHARE_STATUS_CORRUPTION = 6,
  /**
   * An argument or configuration value was rejected.
   */
  PPSHARE_STATUS_VALIDATION = 7,
  /**
   * A library-internal guarantee was observed broken.
   */
  PPSHARE_STATUS_INVARIANT = 8,
  /**
   * The requested construction has no solution under these parameters.
   */
  PPSHARE_STATUS_INFEASIBLE = 9,
  /**
   * A panic was caught at the boundary.
   */
  PPSHARE_STATUS_PANIC = 10,
} ppshare_status;

/**
 * Output format for the class-similarity graph.
 */
typedef enum {
  PPSHARE_GRAPH_FORMAT_DOT = 0,
  PPSHARE_GRAPH_FORMAT_JSON = 1,
} ppshare_graph_format;

/**
 * Loaded patch-feature dataset.
 */
typedef struct ppshare_dataset ppshare_dataset;

/**
 * Prototype-pool classifier.
 */
typedef struct ppshare_model ppshare_model;

/**
 * Counters from one randomized logit-bound sweep.
 * `clean` is true when no assumption check, bound, or protected
 * prediction failed across the whole sweep.
 */
typedef struct {
  size_t trials;
  size_t assumption_failures;
  size_t bound_violations;
  /**
   * trials whose pre-merge margin met the preservation threshold
   */
  size_t margin_holds;
  /**
   * margin held but the prediction moved; must stay zero
   */
  size_t flips_under_margin;
  bool clean;
} ppshare_verify_result;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; do not free.
 */
const char *ppshare_version(void);

/**
 * Message from the most recent failing call on this thread. Empty
 * string if nothing failed yet. The pointer stays valid until the next
 * failing call on the same thread; do not free.
 */
const char *ppshare_last_error(void);

/**
 * Frees a string returned through a `char **` out-param. NULL is a no-op.
 */
void ppshare_string_free(char *s);

/**
 * Loads a PFM dataset file.
 */
ppshare_status ppshare_dataset_load(const char *path, ppshare_dataset **out);

/**
 * Writes a dataset back out as a PFM file.
 */
ppshare_status ppshare_dataset_save(const ppshare_dataset *dataset, const char *path);

/**
 * Generates a synthetic train/val pair from a JSON generator spec.
 * `out_plan_json` may be NULL; when given it receives the cluster plan
 * used to build the data.
 */
ppshare_status ppshare_dataset_synthesize(const char *spec_json,
                                          uint64_t seed,
                                          ppshare_dataset **out_train,
                                          ppshare_dataset **out_val,
                                          char **out_plan_json);

/**
 * Frees a dataset handle. NULL is a no-op.
 */
void ppshare_dataset_free(ppshare_dataset *dataset);

/**
 * Number of images; 0 if the handle is NULL.
 */
size_t ppshare_dataset_num_images(const ppshare_dataset *dataset);

/**
 * Number of classes; 0 if the handle is NULL.
 */
size_t ppshare_dataset_num_classes(const ppshare_dataset *dataset);

/**
 * Patch feature dimension; 0 if the handle is NULL.
 */
size_t ppshare_dataset_feat_dim(const ppshare_dataset *dataset);

/**
 * Loads a model checkpoint.
 */
ppshare_status ppshare_model_load(const char *path, ppshare_model **out);

/**
 * Writes a model checkpoint.
 */
ppshare_status ppshare_model_save(const ppshare_model *model, const char *path);

/**
 * Frees a model handle. NULL is a no-op.
 */
void ppshare_model_free(ppshare_model *model);

/**
 * Number of output classes; 0 if the handle is NULL.
 */
size_t ppshare_model_num_classes(const ppshare_model *model);

/**
 * Number of live prototypes; 0 if the handle is NULL.
 */
size_t ppshare_model_pool_size(const ppshare_model *model);

/**
 * Similarity floor epsilon; NaN if the handle is NULL.
 */
double ppshare_model_epsilon(const ppshare_model *model);

/**
 * Trains a model on a dataset. `val` may be NULL; `config_json` may be
 * NULL for defaults and otherwise holds a training-config JSON object.
 */
ppshare_status ppshare_model_train(const ppshare_dataset *train,
                                   const ppshare_dataset *val,
                                   const char *config_json,
                                   ppshare_model **out);

/**
 * Merge-prunes the model in place. `val` may be NULL. The config
 * arguments may be NULL for defaults. `out_log_json` may be NULL; when
 * given it receives the step-by-step prune log.
 */
ppshare_status ppshare_model_prune(ppshare_model *model,
                                   const ppshare_dataset *train,
                                   const ppshare_dataset *val,
                                   const char *train_config_json,
                                   const char *prune_config_json,
                                   char **out_log_json);

/**
 * Predicts the class of one image given as `num_patches * feat_dim`
 * floats in patch-major order.
 */
ppshare_status ppshare_model_predict(const ppshare_model *model,
                                     const float *patches,
                                     size_t num_patches,
                                     size_t feat_dim,
                                     size_t *out_class);

/**
 * Computes per-class logits for one image. `out_logits` must hold
 * exactly `ppshare_model_num_classes` values.
 */
ppshare_status ppshare_model_logits(const ppshare_model *model,
                                    const float *patches,
                                    size_t num_patches,
                                    size_t feat_dim,
                                    double *out_logits,
                                    size_t out_len);

/**
 * Fraction of images the model labels correctly.
 */
ppshare_status ppshare_model_accuracy(const ppshare_model *model,
                                      const ppshare_dataset *dataset,
                                      double *out_accuracy);

/**
 * Renders the prototype-sharing class graph as DOT or JSON text.
 */
ppshare_status ppshare_model_class_graph(const ppshare_model *model,
                                         ppshare_graph_format format,
                                         char **out_text);

/**
 * Runs `trials` randomized constructed merge instances at one
 * perturbation level `delta` in (0, 1) and reports aggregate counters.
 */
ppshare_status ppshare_verify_bounds(double delta,
                                     size_t trials,
                                     uint64_t base_seed,
                                     ppshare_verify_result *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PPSHARE_H */
