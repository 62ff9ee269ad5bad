#ifndef QEFIX_H
#define QEFIX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QefixDecision {
  QEFIX_DECISION_NO_MASK = 0,
  QEFIX_DECISION_MASK_MINOR_ONLY = 1,
  QEFIX_DECISION_MASK_NON_MINOR = 2,
  QEFIX_DECISION_MASK_ALL = 3,
} QefixDecision;

typedef enum QefixSeverity {
  QEFIX_SEVERITY_MINOR = 0,
  QEFIX_SEVERITY_MAJOR = 1,
  QEFIX_SEVERITY_CRITICAL = 2,
} QefixSeverity;

typedef enum QefixStatus {
  QEFIX_STATUS_OK = 0,
  QEFIX_STATUS_NULL_POINTER = 1,
  QEFIX_STATUS_INVALID_UTF8 = 2,
  QEFIX_STATUS_INVALID_ARGUMENT = 3,
  QEFIX_STATUS_OUT_OF_BOUNDS = 4,
  QEFIX_STATUS_BLANK_COLLISION = 5,
  QEFIX_STATUS_METRIC_ERROR = 6,
  QEFIX_STATUS_IO_ERROR = 7,
  QEFIX_STATUS_PARSE_ERROR = 8,
  QEFIX_STATUS_PANIC = 99,
} QefixStatus;

// A loaded segment corpus.
typedef struct QefixCorpus QefixCorpus;

// A masked hypothesis together with the decision that produced it.
typedef struct QefixMasked QefixMasked;

// Masking thresholds and blank token.
typedef struct QefixPolicy QefixPolicy;

// Character offsets into the hypothesis, end exclusive.
typedef struct QefixSpan {
  size_t start;
  size_t end;
  enum QefixSeverity severity;
} QefixSpan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next call into this library on the same thread.
const char *qefix_last_error_message(void);

// # Safety
// `s` must come from this library or be null.
void qefix_string_free(char *s);

// Creates a policy. A null `blank_token` selects the default `__BLANK__`.
//
// # Safety
// `blank_token` must be null or a NUL-terminated string; `out` must be writable.
enum QefixStatus qefix_policy_new(double no_mask_threshold,
                                  double full_mask_threshold,
                                  const char *blank_token,
                                  struct QefixPolicy **out);

// # Safety
// `policy` must come from [`qefix_policy_new`] or be null.
void qefix_policy_free(struct QefixPolicy *policy);

// Decides which spans to mask for `qe_score` and blanks them out.
//
// # Safety
// `spans` must point to `n_spans` elements (or be null when `n_spans` is 0).
enum QefixStatus qefix_mask(const struct QefixPolicy *policy,
                            const char *hypothesis,
                            double qe_score,
                            const struct QefixSpan *spans,
                            size_t n_spans,
                            struct QefixMasked **out);

// # Safety
// `masked` must come from [`qefix_mask`] or be null.
void qefix_masked_free(struct QefixMasked *masked);

// # Safety
// `masked` must be a live handle; `out` must be writable.
enum QefixStatus qefix_masked_decision(const struct QefixMasked *masked, enum QefixDecision *out);

// # Safety
// `masked` must be a live handle; `out` must be writable.
enum QefixStatus qefix_masked_blank_count(const struct QefixMasked *masked, size_t *out);

// Masked text; free with [`qefix_string_free`].
//
// # Safety
// `masked` must be a live handle; `out` must be writable.
enum QefixStatus qefix_masked_text(const struct QefixMasked *masked, char **out);

// Restores the original hypothesis; free with [`qefix_string_free`].
//
// # Safety
// `masked` must be a live handle; `out` must be writable.
enum QefixStatus qefix_masked_unmask(const struct QefixMasked *masked, char **out);

// Substitutes `n_fills` strings for the blanks, left to right.
//
// # Safety
// `fills` must point to `n_fills` NUL-terminated strings.
enum QefixStatus qefix_masked_fill(const struct QefixMasked *masked,
                                   const char *const *fills,
                                   size_t n_fills,
                                   char **out);

// Cleans raw model output. `recoverable` is false when placeholder tokens remain.
//
// # Safety
// All pointers must be valid; `out_text` receives a string to free with
// [`qefix_string_free`].
enum QefixStatus qefix_postprocess(const struct QefixPolicy *policy,
                                   const char *raw,
                                   char **out_text,
                                   bool *out_recoverable);

// Sentence-level chrF++ on a 0 to 100 scale.
//
// # Safety
// Strings must be NUL-terminated; `out` must be writable.
enum QefixStatus qefix_chrf_pp(const char *hypothesis, const char *reference, double *out);

// BLEU-4 of a single sentence pair on a 0 to 100 scale. `lang` selects the
// tokenizer (`zh` and `ja` split into characters).
//
// # Safety
// Strings must be NUL-terminated; `out` must be writable.
enum QefixStatus qefix_bleu(const char *hypothesis,
                            const char *reference,
                            const char *lang,
                            double *out);

// Token-level edit distance divided by the original's token count.
//
// # Safety
// Strings must be NUL-terminated; `out` must be writable.
enum QefixStatus qefix_edit_rate(const char *original,
                                 const char *edited,
                                 const char *lang,
                                 double *out);

// Gain-to-edit ratio.
//
// # Safety
// `out` must be writable.
enum QefixStatus qefix_g2e(double delta, double edit_rate, double *out);

// Loads a JSONL corpus. `permissive` drops bad spans and clamps scores
// instead of failing.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum QefixStatus qefix_corpus_load(const char *path, bool permissive, struct QefixCorpus **out);

// # Safety
// `corpus` must be a live handle; `out` must be writable.
enum QefixStatus qefix_corpus_len(const struct QefixCorpus *corpus, size_t *out);

// Segment `index` as one JSON record; free with [`qefix_string_free`].
//
// # Safety
// `corpus` must be a live handle; `out` must be writable.
enum QefixStatus qefix_corpus_segment_json(const struct QefixCorpus *corpus,
                                           size_t index,
                                           char **out);

// # Safety
// `corpus` must come from [`qefix_corpus_load`] or be null.
void qefix_corpus_free(struct QefixCorpus *corpus);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QEFIX_H */
