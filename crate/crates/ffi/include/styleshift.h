#ifndef STYLESHIFT_H
#define STYLESHIFT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  SS_ROUGE_VARIANT_ONE = 1,
  SS_ROUGE_VARIANT_TWO = 2,
  SS_ROUGE_VARIANT_L = 3,
} SsRougeVariant;

typedef enum {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_UTF8 = 2,
  SS_STATUS_IO = 3,
  SS_STATUS_FORMAT = 4,
  SS_STATUS_INVALID_ARGUMENT = 5,
  SS_STATUS_INTERNAL = 6,
  SS_STATUS_PANIC = 7,
} SsStatus;

/**
 * A source/target style classifier.
 */
typedef struct SsClassifier SsClassifier;

/**
 * A trained run: vocabulary, schedule and one checkpoint.
 */
typedef struct SsModel SsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread ("" after a success).
 * The pointer stays valid until the next call on the same thread.
 */
const char *ss_last_error(void);

/**
 * Opens a training output directory. `checkpoint` may be null to use the
 * run's best checkpoint.
 */
SsStatus ss_model_open(const char *run_dir, const char *checkpoint, SsModel **out);

/**
 * Generates target-style text for `src`; `*out` receives a new string.
 */
SsStatus ss_model_generate(const SsModel *model,
                           const char *src,
                           const char *style,
                           uint64_t seed,
                           bool clamp,
                           char **out);

/**
 * Vocabulary size of the model, or 0 for a null handle.
 */
size_t ss_model_vocab_size(const SsModel *model);

void ss_model_free(SsModel *model);

void ss_string_free(char *s);

SsStatus ss_classifier_load(const char *path, SsClassifier **out);

/**
 * Probability that `text` is in the target style.
 */
SsStatus ss_classifier_score(const SsClassifier *classifier, const char *text, double *p_target);

void ss_classifier_free(SsClassifier *classifier);

/**
 * Corpus BLEU (0–100, up to 4-grams) over `n` whitespace-tokenized pairs.
 */
SsStatus ss_bleu(const char *const *candidates,
                 const char *const *references,
                 size_t n,
                 double *out);

/**
 * ROUGE F1 of one whitespace-tokenized candidate against one reference.
 */
SsStatus ss_rouge(const char *candidate, const char *reference, SsRougeVariant variant, double *f1);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STYLESHIFT_H */
