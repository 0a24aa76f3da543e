#ifndef DECLAB_H
#define DECLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DeclabStatus {
  DECLAB_STATUS_OK = 0,
  DECLAB_STATUS_NULL_POINTER = 1,
  DECLAB_STATUS_INVALID_ARGUMENT = 2,
  DECLAB_STATUS_UTF8 = 3,
  DECLAB_STATUS_COMPUTATION = 4,
  DECLAB_STATUS_IO = 5,
  DECLAB_STATUS_OUT_OF_RANGE = 6,
  DECLAB_STATUS_PANIC = 7,
} DeclabStatus;

typedef enum DeclabCountMethod {
  DECLAB_COUNT_METHOD_BRUTE = 0,
  DECLAB_COUNT_METHOD_MITM = 1,
} DeclabCountMethod;

/**
 * Opaque scenario configuration.
 */
typedef struct DeclabConfig DeclabConfig;

/**
 * Opaque list of result rows.
 */
typedef struct DeclabRows DeclabRows;

/**
 * Opaque generalized Dirichlet sequence.
 */
typedef struct DeclabSeq DeclabSeq;

/**
 * Numeric view of one result row; absent optional columns are NaN
 * (or -1 for integer columns).
 */
typedef struct DeclabRow {
  uint64_t n;
  int64_t l;
  int64_t l1;
  double p;
  double q;
  double t;
  double theta;
  int64_t seed;
  int64_t r;
  double x;
  double lhs;
  double rhs;
  double ratio;
  double paper_bound;
} DeclabRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *declab_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`) and returns the full message length
 * without the terminator. Pass a null `buf` to query the length.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t declab_last_error_message(char *buf, size_t len);

/**
 * The reflected log sequence of ⌊N^{1/2}⌋ terms.
 *
 * # Safety
 * `dst` must be valid for a write.
 */
enum DeclabStatus declab_seq_log(uint64_t n, struct DeclabSeq **dst);

/**
 * A random admissible sequence, deterministic per seed.
 *
 * # Safety
 * `dst` must be valid for a write.
 */
enum DeclabStatus declab_seq_random(uint64_t n,
                                    double theta,
                                    uint64_t seed,
                                    struct DeclabSeq **dst);

/**
 * The AP-rich sequence a_n = g(n), n = 0..⌊N/8⌋.
 *
 * # Safety
 * `dst` must be valid for a write.
 */
enum DeclabStatus declab_seq_ap_rich(uint64_t n, struct DeclabSeq **dst);

/**
 * # Safety
 * `seq` must come from a `declab_seq_*` constructor; `len` valid for a write.
 */
enum DeclabStatus declab_seq_len(const struct DeclabSeq *seq, size_t *len);

/**
 * Copies all terms into `buf`, which must hold at least `declab_seq_len`
 * values; `cap` is its capacity.
 *
 * # Safety
 * `seq` must be a live handle and `buf` valid for `cap` writes.
 */
enum DeclabStatus declab_seq_terms(const struct DeclabSeq *seq, double *buf, size_t cap);

/**
 * Writes 1 to `valid` when the sequence passes the admissibility check.
 *
 * # Safety
 * `seq` must be a live handle and `valid` valid for a write.
 */
enum DeclabStatus declab_seq_validate(const struct DeclabSeq *seq, int32_t *valid);

/**
 * # Safety
 * `seq` must be null or a handle not yet freed.
 */
void declab_seq_free(struct DeclabSeq *seq);

/**
 * Ordered 6-tuples with |a_i+a_j+a_k − a_x−a_y−a_z| ≤ tol, plus the
 * diagonal count.
 *
 * # Safety
 * `terms` must be valid for `len` reads; `total` and `diagonal` for writes.
 */
enum DeclabStatus declab_count_solutions(const double *terms,
                                         size_t len,
                                         double tol,
                                         enum DeclabCountMethod method,
                                         uint64_t *total,
                                         uint64_t *diagonal);

/**
 * Least-squares slope and intercept of log2(y) against log2(x); needs at
 * least four positive points.
 *
 * # Safety
 * `xs` and `ys` must be valid for `len` reads; outputs valid for writes.
 */
enum DeclabStatus declab_fit_exponent(const double *xs,
                                      const double *ys,
                                      size_t len,
                                      double *slope,
                                      double *intercept);

/**
 * The stock configuration of a preset.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `dst` valid for a write.
 */
enum DeclabStatus declab_config_preset(const char *name, struct DeclabConfig **dst);

/**
 * A configuration parsed from JSON and validated.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `dst` valid for a write.
 */
enum DeclabStatus declab_config_from_json(const char *json, struct DeclabConfig **dst);

/**
 * Restricts the config's N axis to `ns` (useful for quick runs).
 *
 * # Safety
 * `cfg` must be a live handle and `ns` valid for `len` reads.
 */
enum DeclabStatus declab_config_set_n(struct DeclabConfig *cfg, const uint64_t *ns, size_t len);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void declab_config_free(struct DeclabConfig *cfg);

/**
 * Runs every grid point of `cfg`.
 *
 * # Safety
 * `cfg` must be a live handle; `dst` valid for a write.
 */
enum DeclabStatus declab_run(const struct DeclabConfig *cfg, struct DeclabRows **dst);

/**
 * # Safety
 * `rows` must be a live handle; `len` valid for a write.
 */
enum DeclabStatus declab_rows_len(const struct DeclabRows *rows, size_t *len);

/**
 * Numeric columns of row `i`.
 *
 * # Safety
 * `rows` must be a live handle; `row` valid for a write.
 */
enum DeclabStatus declab_rows_get(const struct DeclabRows *rows, size_t i, struct DeclabRow *row);

/**
 * Copies the fit group label of row `i` like `declab_last_error_message`:
 * returns the full length, writes a truncated NUL-terminated copy.
 *
 * # Safety
 * `rows` must be a live handle; `buf` null or valid for `len` bytes;
 * `needed` valid for a write.
 */
enum DeclabStatus declab_rows_group(const struct DeclabRows *rows,
                                    size_t i,
                                    char *buf,
                                    size_t len,
                                    size_t *needed);

/**
 * Writes the rows as CSV (the CLI schema) to `path`.
 *
 * # Safety
 * `rows` must be a live handle and `path` a NUL-terminated string.
 */
enum DeclabStatus declab_rows_write_csv(const struct DeclabRows *rows, const char *path);

/**
 * # Safety
 * `rows` must be null or a handle not yet freed.
 */
void declab_rows_free(struct DeclabRows *rows);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DECLAB_H */
