#ifndef NUMBASE_H
#define NUMBASE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NbOperation {
  NB_OPERATION_ADD = 0,
  NB_OPERATION_MUL = 1,
} NbOperation;

typedef enum NbPattern {
  NB_PATTERN_EXACT = 0,
  NB_PATTERN_TRUNCATED_ADD = 1,
  NB_PATTERN_TRUNCATED_ADD_CARRY = 2,
  NB_PATTERN_MISALIGNED_TRUNCATED = 3,
  NB_PATTERN_OTHER = 4,
} NbPattern;

typedef enum NbStatus {
  NB_STATUS_OK = 0,
  NB_STATUS_NULL_POINTER = 1,
  NB_STATUS_INVALID_ARGUMENT = 2,
  NB_STATUS_BUFFER_TOO_SMALL = 3,
  /*
   The quantity has no value for these inputs, e.g. an invalid decode.
   */
  NB_STATUS_UNDEFINED = 4,
  NB_STATUS_IO = 5,
  NB_STATUS_CORRUPT = 6,
  NB_STATUS_MODEL = 7,
  NB_STATUS_PANIC = 8,
} NbStatus;

/*
 A loaded checkpoint and its vocabulary.
 */
typedef struct NbModel NbModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread; empty after a
 success. The pointer stays valid until the next call on this thread.
 */
const char *nb_last_error(void);

/*
 Most-significant-first digit groups of a decimal integer.

 # Safety
 `decimal` must be a valid C string; `out` must hold `cap` entries.
 */
enum NbStatus nb_encode(uint32_t base,
                        const char *decimal,
                        uint32_t *out,
                        size_t cap,
                        size_t *out_len);

/*
 Decimal rendering of a group sequence.

 # Safety
 `groups` must hold `len` entries; `out` must hold `cap` bytes.
 */
enum NbStatus nb_decode(uint32_t base,
                        const uint32_t *groups,
                        size_t len,
                        char *out,
                        size_t cap,
                        size_t *out_len);

/*
 Number of base-`base` tokens in a decimal integer.

 # Safety
 `decimal` must be a valid C string; `out` must be writable.
 */
enum NbStatus nb_token_length(uint32_t base, const char *decimal, size_t *out);

/*
 Levenshtein distance between two strings, unit costs.

 # Safety
 `a` and `b` must be valid C strings; `out` must be writable.
 */
enum NbStatus nb_edit_distance(const char *a, const char *b, size_t *out);

/*
 Normalized edit similarity in [0, 1].

 # Safety
 `a` and `b` must be valid C strings; `out` must be writable.
 */
enum NbStatus nb_ned(const char *a, const char *b, double *out);

/*
 `|log10(output / gold)|`. A null or non-numeric `output` is an invalid
 decode and yields `Undefined`, as does a zero on either side.

 # Safety
 `gold` must be a valid C string, `output` null or a valid C string.
 */
enum NbStatus nb_rel_err_log(const char *output, const char *gold, double *out);

/*
 `|output - gold| / gold`.

 # Safety
 As for [`nb_rel_err_log`].
 */
enum NbStatus nb_rel_err_conv(const char *output, const char *gold, double *out);

/*
 Keeps the leading `max_tokens` groups of a decimal integer.

 # Safety
 `decimal` must be a valid C string; `out` must hold `cap` bytes.
 */
enum NbStatus nb_truncate(uint32_t base,
                          const char *decimal,
                          size_t max_tokens,
                          char *out,
                          size_t cap,
                          size_t *out_len);

/*
 Labels a model's answer to `a + b` against the extrapolation patterns.
 A null `output` is an invalid decode.

 # Safety
 `a` and `b` must be valid C strings, `output` null or a valid C string,
 `out` writable.
 */
enum NbStatus nb_classify_addition(uint32_t base,
                                   const char *a,
                                   const char *b,
                                   const char *output,
                                   size_t max_trained_tokens,
                                   enum NbPattern *out);

/*
 Loads a checkpoint trained under base `base`.

 # Safety
 `path` must be a valid C string; `out` must be writable. Release the
 handle with [`nb_model_free`].
 */
enum NbStatus nb_model_load(const char *path, uint32_t base, struct NbModel **out);

/*
 # Safety
 `model` must come from [`nb_model_load`] and not be freed twice. Null is
 ignored.
 */
void nb_model_free(struct NbModel *model);

/*
 Vocabulary size of a model, or 0 for null.

 # Safety
 `model` must be null or a live handle.
 */
size_t nb_model_vocab_size(const struct NbModel *model);

/*
 Context length of a model, or 0 for null.

 # Safety
 `model` must be null or a live handle.
 */
size_t nb_model_context_length(const struct NbModel *model);

/*
 Greedy continuation of `prompt`, stopping after EOS or `max_new` tokens.

 # Safety
 `model` must be a live handle, `prompt` must hold `len` entries and
 `out` must hold `cap` entries.
 */
enum NbStatus nb_model_greedy_decode(const struct NbModel *model,
                                     const uint32_t *prompt,
                                     size_t len,
                                     size_t max_new,
                                     uint32_t *out,
                                     size_t cap,
                                     size_t *out_len);

/*
 Asks the model for `a op b` and writes its answer in decimal. An output
 that does not read as a number yields `Undefined`.

 # Safety
 `model` must be a live handle, `a` and `b` valid C strings, `out` must
 hold `cap` bytes.
 */
enum NbStatus nb_model_solve(const struct NbModel *model,
                             const char *a,
                             const char *b,
                             enum NbOperation op,
                             char *out,
                             size_t cap,
                             size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NUMBASE_H */
