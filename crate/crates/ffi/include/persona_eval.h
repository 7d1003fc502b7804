#ifndef PERSONA_EVAL_H
#define PERSONA_EVAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Number of persona conditions (matrix columns).
#define PE_CONDITIONS 12

typedef enum PeStatus {
  PE_STATUS_OK = 0,
  PE_STATUS_NULL_POINTER = 1,
  PE_STATUS_INVALID_ARGUMENT = 2,
  PE_STATUS_INVALID_UTF8 = 3,
  PE_STATUS_IO = 4,
  PE_STATUS_PARSE = 5,
  // A correlation or metric is undefined for the given data.
  PE_STATUS_UNDEFINED = 6,
  PE_STATUS_PANIC = 7,
} PeStatus;

// Outcome of the confidence rule for one estimate.
typedef enum PeEstimateStatus {
  PE_ESTIMATE_STATUS_CONFIDENT = 0,
  PE_ESTIMATE_STATUS_EXCLUDED = 1,
} PeEstimateStatus;

typedef struct PeCorpus PeCorpus;

typedef struct PeCorrelationMatrix PeCorrelationMatrix;

typedef struct PeLabelMatrix PeLabelMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread. The pointer stays
// valid until the next failing call on the same thread.
const char *pe_last_error(void);

// Library version as a static NUL-terminated string.
const char *pe_version(void);

void pe_string_free(char *s);

// Wald interval for `p_hat` at significance `alpha` with `repeats` samples.
enum PeStatus pe_wald_ci(double p_hat, double alpha, uint32_t repeats, double *low, double *high);

// Applies the confidence rule. `label` receives 0 or 1, or -1 when excluded.
enum PeStatus pe_classify_estimate(double p_hat,
                                   double alpha,
                                   uint32_t repeats,
                                   enum PeEstimateStatus *status,
                                   int8_t *label);

// Phi coefficient of two label columns under pairwise deletion. Returns
// `Undefined` (with `support` still set) when a side is constant or fewer
// than two rows are shared.
enum PeStatus pe_binary_correlation(const int8_t *a,
                                    const int8_t *b,
                                    size_t len,
                                    double *r,
                                    size_t *support);

// Replaces user mentions with the `<user>` placeholder. Free the result
// with `pe_string_free`.
enum PeStatus pe_normalize_mentions(const char *text, char **out);

enum PeStatus pe_corpus_load(const char *path, struct PeCorpus **out);

size_t pe_corpus_len(const struct PeCorpus *corpus);

size_t pe_corpus_included_count(const struct PeCorpus *corpus);

void pe_corpus_free(struct PeCorpus *corpus);

// An all-missing matrix of `rows` × 12 labels in canonical condition order.
enum PeStatus pe_label_matrix_new(size_t rows, struct PeLabelMatrix **out);

enum PeStatus pe_label_matrix_set(struct PeLabelMatrix *matrix,
                                  size_t row,
                                  size_t condition,
                                  int8_t label);

void pe_label_matrix_free(struct PeLabelMatrix *matrix);

// 12×12 phi matrix; `listwise` nonzero keeps only fully labelled rows.
enum PeStatus pe_correlation_matrix_build(const struct PeLabelMatrix *matrix,
                                          int32_t listwise,
                                          struct PeCorrelationMatrix **out);

// Matrix built from 144 row-major values; NaN marks an undefined entry.
enum PeStatus pe_correlation_matrix_from_values(const double *values,
                                                struct PeCorrelationMatrix **out);

enum PeStatus pe_correlation_get(const struct PeCorrelationMatrix *cm,
                                 size_t a,
                                 size_t b,
                                 double *r);

enum PeStatus pe_clc(const struct PeCorrelationMatrix *cm, int32_t exclude_diagonal, double *out);

enum PeStatus pe_igd(const struct PeCorrelationMatrix *cm, double *out);

void pe_correlation_matrix_free(struct PeCorrelationMatrix *cm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PERSONA_EVAL_H */
