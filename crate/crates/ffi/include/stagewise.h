#ifndef STAGEWISE_H
#define STAGEWISE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SwStatus {
  SW_STATUS_OK = 0,
  /**
   * Bad argument or configuration.
   */
  SW_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Unreadable, malformed or inconsistent data.
   */
  SW_STATUS_DATA = 2,
  /**
   * Non-finite values or a singular fit.
   */
  SW_STATUS_NUMERICAL = 3,
  SW_STATUS_NULL_POINTER = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  SW_STATUS_INTERNAL = 5,
} SwStatus;

typedef struct SwAlphaController SwAlphaController;

typedef struct SwDataset SwDataset;

typedef struct SwModel SwModel;

typedef struct SwRunLog SwRunLog;

typedef struct SwMetricsConfig {
  double alpha;
  double beta;
  uint32_t fit_degree;
  double fallback_t1;
  double fallback_t2;
} SwMetricsConfig;

typedef struct SwStageBoundaries {
  uint32_t t1_end;
  uint32_t t2_end;
  uint32_t total;
  bool fallback_used;
} SwStageBoundaries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 * message length in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t sw_last_error(char *buf, size_t len);

struct SwMetricsConfig sw_metrics_config_default(void);

/**
 * Easy and hard proportions of `n` rows of `classes` probabilities.
 *
 * # Safety
 * `probs` must point to `n * classes` doubles; the outputs must be valid.
 */
enum SwStatus sw_ddp(const double *probs,
                     size_t n,
                     size_t classes,
                     const struct SwMetricsConfig *cfg,
                     double *ddp_e,
                     double *ddp_h);

/**
 * KAR at each of the `n` epochs `ts`, written to `kar_out`.
 *
 * # Safety
 * `ts`, `ddp_e`, `ddp_h` and `kar_out` must each hold `n` doubles.
 */
enum SwStatus sw_kar_series(const double *ts,
                            const double *ddp_e,
                            const double *ddp_h,
                            size_t n,
                            const struct SwMetricsConfig *cfg,
                            double *kar_out);

/**
 * Learning-period boundaries of a KAR series.
 *
 * # Safety
 * `ts` and `kar` must each hold `n` doubles; `out` must be valid.
 */
enum SwStatus sw_detect_stages(const double *ts,
                               const double *kar,
                               size_t n,
                               const struct SwMetricsConfig *cfg,
                               struct SwStageBoundaries *out);

/**
 * Target α for a batch with the given easy and hard proportions.
 *
 * # Safety
 * `alpha` must be a valid pointer.
 */
enum SwStatus sw_dynamic_alpha(double ddp_e, double ddp_h, double *alpha);

/**
 * Creates a dynamic α controller with smoothing `tau`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SwStatus sw_alpha_controller_new(double tau,
                                      double alpha_init,
                                      struct SwAlphaController **out);

/**
 * Advances the controller by one batch at fractional epoch `t` and writes
 * the smoothed α.
 *
 * # Safety
 * `ctrl` must come from [`sw_alpha_controller_new`]; `alpha` must be valid.
 */
enum SwStatus sw_alpha_controller_advance(struct SwAlphaController *ctrl,
                                          double ddp_e,
                                          double ddp_h,
                                          double t,
                                          double *alpha);

/**
 * # Safety
 * `ctrl` must be null or come from [`sw_alpha_controller_new`].
 */
void sw_alpha_controller_free(struct SwAlphaController *ctrl);

/**
 * Generates a synthetic RGB dataset.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SwStatus sw_dataset_generate(size_t n,
                                  size_t classes,
                                  size_t size,
                                  double noise,
                                  uint64_t seed,
                                  struct SwDataset **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum SwStatus sw_dataset_read(const char *path, struct SwDataset **out);

/**
 * # Safety
 * `ds` must be a live dataset handle; `path` a NUL-terminated string.
 */
enum SwStatus sw_dataset_write(const struct SwDataset *ds, const char *path);

/**
 * Number of samples, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t sw_dataset_len(const struct SwDataset *ds);

/**
 * # Safety
 * `ds` must be null or a dataset handle not yet freed.
 */
void sw_dataset_free(struct SwDataset *ds);

/**
 * Loads a checkpoint that carries normalization statistics.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum SwStatus sw_model_load(const char *path, struct SwModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum SwStatus sw_model_save(const struct SwModel *model, const char *path);

/**
 * Top-1 accuracy and mean max softmax probability over `ds`.
 *
 * # Safety
 * Handles must be live; output pointers valid.
 */
enum SwStatus sw_model_evaluate(const struct SwModel *model,
                                const struct SwDataset *ds,
                                double *top1,
                                double *mean_max_prob);

/**
 * Top-k attention erasure probe. `ks` must be strictly increasing from 0;
 * `p_k` and `top1` receive one value per k.
 *
 * # Safety
 * `ks`, `p_k` and `top1` must each hold `n_ks` elements; handles live.
 */
enum SwStatus sw_model_probe(const struct SwModel *model,
                             const struct SwDataset *ds,
                             const uint32_t *ks,
                             size_t n_ks,
                             double fill,
                             double *p_k,
                             double *top1);

/**
 * # Safety
 * `model` must be null or a model handle not yet freed.
 */
void sw_model_free(struct SwModel *model);

/**
 * Trains a model from a JSON config (dotted keys) on two datasets. The
 * model and run log are returned even when training stopped on a
 * non-finite value; the status is then `SW_STATUS_NUMERICAL`.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; handles live; outputs valid.
 */
enum SwStatus sw_train(const char *config_json,
                       const struct SwDataset *train_ds,
                       const struct SwDataset *eval_ds,
                       struct SwModel **model_out,
                       struct SwRunLog **log_out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum SwStatus sw_runlog_read(const char *path, struct SwRunLog **out);

/**
 * Number of epoch records, or 0 for a null handle.
 *
 * # Safety
 * `log` must be null or a live run log handle.
 */
size_t sw_runlog_epochs(const struct SwRunLog *log);

/**
 * Copies the epoch-level series into caller arrays of `len` elements.
 * Fails when `len` differs from [`sw_runlog_epochs`].
 *
 * # Safety
 * Each array must hold `len` doubles.
 */
enum SwStatus sw_runlog_series(const struct SwRunLog *log,
                               size_t len,
                               double *epoch,
                               double *ddp_e,
                               double *ddp_h,
                               double *eval_acc);

/**
 * # Safety
 * `log` must be a live handle; `path` a NUL-terminated string.
 */
enum SwStatus sw_runlog_write(const struct SwRunLog *log, const char *path);

/**
 * # Safety
 * `log` must be null or a run log handle not yet freed.
 */
void sw_runlog_free(struct SwRunLog *log);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STAGEWISE_H */
