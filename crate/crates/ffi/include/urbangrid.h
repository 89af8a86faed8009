#ifndef URBANGRID_H
#define URBANGRID_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum ug_status {
  UG_STATUS_OK = 0,
  UG_STATUS_NULL_POINTER = 1,
  UG_STATUS_INVALID_ARGUMENT = 2,
  UG_STATUS_IO = 3,
  UG_STATUS_PARSE = 4,
  UG_STATUS_INVALID_WINDOW = 5,
  UG_STATUS_OUT_OF_RANGE = 6,
  UG_STATUS_INVALID_TABLE = 7,
  UG_STATUS_EMPTY_TABLE = 8,
  UG_STATUS_MISSING_SOURCE = 9,
  UG_STATUS_CONFIG = 10,
  UG_STATUS_PANIC = 99,
} ug_status;

typedef enum ug_format {
  // Chosen from the file extension: `.jsonl`/`.ndjson` or CSV.
  UG_FORMAT_INFER = 0,
  UG_FORMAT_CSV = 1,
  UG_FORMAT_JSON_LINES = 2,
} ug_format;

typedef enum ug_bin {
  UG_BIN_DAY = 0,
  UG_BIN_WEEK = 1,
} ug_bin;

typedef enum ug_source {
  UG_SOURCE_MOBILE_DEVICE = 0,
  UG_SOURCE_HOTLINE = 1,
} ug_source;

typedef enum ug_mode {
  UG_MODE_PAIR_PRODUCT = 0,
  UG_MODE_MIN_COUNT = 1,
  UG_MODE_PRESENCE = 2,
} ug_mode;

// Opaque cleaned event dataset.
typedef struct ug_dataset ug_dataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a
// success. Valid until the next call on the same thread; do not free.
const char *ug_last_error_message(void);

// Release a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void ug_string_free(char *s);

// Parse and clean an event log. `format` is a `ug_format`.
//
// `window_start`/`window_end` are RFC 3339 timestamps; pass both as null to
// use whole UTC days covering every report.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum ug_status ug_dataset_load(const char *path,
                               uint32_t format,
                               const char *window_start,
                               const char *window_end,
                               struct ug_dataset **out);

// Generate a synthetic dataset from a JSON generator config.
//
// # Safety
// `config_json` must be NUL-terminated; `out` must be writable.
enum ug_status ug_dataset_generate(const char *config_json, struct ug_dataset **out);

// Release a dataset. Null is ignored.
//
// # Safety
// `dataset` must come from this library and not have been freed already.
void ug_dataset_free(struct ug_dataset *dataset);

// Number of retained events, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t ug_dataset_len(const struct ug_dataset *dataset);

// Number of grid cells, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t ug_dataset_cell_count(const struct ug_dataset *dataset);

// Number of rows dropped while cleaning, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t ug_dataset_rejected(const struct ug_dataset *dataset);

// Per source and category counts and percentages as JSON.
//
// # Safety
// `dataset` must be a live handle; `out` must be writable.
enum ug_status ug_summary_json(const struct ug_dataset *dataset, char **out);

// Global temporal relevance curve for lags `0..=max_lag` bins, as JSON.
// `bin` is a `ug_bin`.
//
// # Safety
// `dataset` must be a live handle; `out` must be writable.
enum ug_status ug_temporal_relevance_json(const struct ug_dataset *dataset,
                                          uint32_t bin,
                                          size_t max_lag,
                                          bool normalize,
                                          char **out);

// Global spatial relevance curve over distance bins of `bin_width_m`
// up to `max_distance_m`, as JSON. `bin` is a `ug_bin`.
//
// # Safety
// `dataset` must be a live handle; `out` must be writable.
enum ug_status ug_spatial_relevance_json(const struct ug_dataset *dataset,
                                         uint32_t bin,
                                         double bin_width_m,
                                         double max_distance_m,
                                         bool normalize,
                                         char **out);

// Category relevance matrix between two sources, as JSON. Sources are
// `ug_source` values and `mode` is a `ug_mode`.
//
// # Safety
// `dataset` must be a live handle; `out` must be writable.
enum ug_status ug_relevance_matrix_json(const struct ug_dataset *dataset,
                                        uint32_t row_source,
                                        uint32_t col_source,
                                        uint32_t mode,
                                        char **out);

// Shannon entropy in nats of a probability vector.
//
// # Safety
// `p` must point to `len` readable doubles; `out` must be writable.
enum ug_status ug_entropy(const double *p, size_t len, double *out);

// Mutual information in nats of a row-major `rows` x `cols` table of
// non-negative weights.
//
// # Safety
// `weights` must point to `rows * cols` readable doubles; `out` must be writable.
enum ug_status ug_mutual_information(const double *weights, size_t rows, size_t cols, double *out);

// Normalized mutual information of a row-major table; 0 when either
// marginal is concentrated on one value.
//
// # Safety
// `weights` must point to `rows * cols` readable doubles; `out` must be writable.
enum ug_status ug_normalized_mutual_information(const double *weights,
                                                size_t rows,
                                                size_t cols,
                                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* URBANGRID_H */
