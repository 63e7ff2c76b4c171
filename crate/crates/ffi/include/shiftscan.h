#ifndef SHIFTSCAN_H
#define SHIFTSCAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_ARGUMENT = 2,
  SS_STATUS_DIMENSION_MISMATCH = 3,
  SS_STATUS_INSUFFICIENT_DATA = 4,
  SS_STATUS_IO = 5,
  SS_STATUS_PARSE = 6,
  SS_STATUS_PANIC = 7,
  SS_STATUS_OTHER = 8,
} SsStatus;

/**
 * Opaque fitted 2D embedding.
 */
typedef struct SsEmbedding SsEmbedding;

/**
 * Opaque scattering filter bank.
 */
typedef struct SsFilterBank SsFilterBank;

typedef struct SsBTestResult {
  double statistic;
  double z;
  double p_value;
  bool p_value_underflow;
  size_t block_size;
  size_t blocks;
  bool reject;
  /**
   * Kernel scale actually used.
   */
  double gamma;
} SsBTestResult;

/**
 * A metric value; `defined` is false when its denominator was zero.
 */
typedef struct SsRate {
  double value;
  bool defined;
} SsRate;

typedef struct SsMetrics {
  struct SsRate auc;
  struct SsRate accuracy;
  struct SsRate precision;
  struct SsRate sensitivity;
  struct SsRate specificity;
  struct SsRate ppv;
  struct SsRate npv;
  /**
   * Records evaluated after abstention.
   */
  size_t n;
  double threshold;
  double abstention_fraction;
} SsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ss_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ss_version(void);

/**
 * Number of scattering coefficients for `scales` (J), `orientations` (L)
 * and `max_order`.
 *
 * # Safety
 * `out` must point to writable storage for one `size_t`.
 */
enum SsStatus ss_feature_count(size_t scales, size_t orientations, size_t max_order, size_t *out);

/**
 * Builds a filter bank for `side × side` images. Nonzero `reflect` selects
 * mirror padding instead of periodic boundaries.
 *
 * # Safety
 * `out` must point to writable storage for one handle pointer.
 */
enum SsStatus ss_filter_bank_new(size_t scales,
                                 size_t orientations,
                                 size_t max_order,
                                 size_t side,
                                 int32_t reflect,
                                 struct SsFilterBank **out);

/**
 * # Safety
 * `bank` must be NULL or a handle from [`ss_filter_bank_new`] not yet freed.
 */
void ss_filter_bank_free(struct SsFilterBank *bank);

/**
 * Coefficients per image for this bank, or 0 for a NULL handle.
 *
 * # Safety
 * `bank` must be NULL or a live handle.
 */
size_t ss_filter_bank_feature_count(const struct SsFilterBank *bank);

/**
 * Scatters one `side × side` image with pixel values in `[0, 255]`,
 * writing `ss_filter_bank_feature_count(bank)` coefficients to `out`.
 *
 * # Safety
 * `pixels` must hold `side * side` doubles and `out` `out_len` doubles.
 */
enum SsStatus ss_scatter(const struct SsFilterBank *bank,
                         const double *pixels,
                         size_t side,
                         double *out,
                         size_t out_len);

/**
 * Block-MMD two-sample test between `x` (`nx × dim`) and `y` (`ny × dim`).
 * `gamma <= 0` selects the median heuristic; `block_size == 0` selects
 * `round(sqrt(n))`.
 *
 * # Safety
 * `x` and `y` must hold `nx * dim` and `ny * dim` doubles; `out` must be writable.
 */
enum SsStatus ss_btest(const double *x,
                       size_t nx,
                       const double *y,
                       size_t ny,
                       size_t dim,
                       double gamma,
                       bool standardize,
                       double alpha,
                       size_t block_size,
                       uint64_t seed,
                       struct SsBTestResult *out);

/**
 * Fits the whitened two-component embedding on `rows × cols` features.
 *
 * # Safety
 * `data` must hold `rows * cols` doubles; `out` must be writable.
 */
enum SsStatus ss_embedding_fit(const double *data,
                               size_t rows,
                               size_t cols,
                               struct SsEmbedding **out);

/**
 * Loads a model JSON as written by the `embed` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SsStatus ss_embedding_load(const char *path, struct SsEmbedding **out);

/**
 * # Safety
 * `model` must be NULL or a live handle not yet freed.
 */
void ss_embedding_free(struct SsEmbedding *model);

/**
 * Projects `rows × cols` features, writing `2 * rows` coordinates
 * (x0, y0, x1, y1, ...) to `out`.
 *
 * # Safety
 * `data` must hold `rows * cols` doubles and `out` `2 * rows` doubles.
 */
enum SsStatus ss_embedding_project(const struct SsEmbedding *model,
                                   const double *data,
                                   size_t rows,
                                   size_t cols,
                                   double *out);

/**
 * Threshold metrics and AUC for `n` scores in `[0, 1]` with 0/1 labels,
 * keeping the `keep_fraction` most confident predictions (1 keeps all).
 * Confidence ties are broken by input position.
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements; `out` must be writable.
 */
enum SsStatus ss_metrics(const double *scores,
                         const uint8_t *labels,
                         size_t n,
                         double threshold,
                         double keep_fraction,
                         struct SsMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHIFTSCAN_H */
