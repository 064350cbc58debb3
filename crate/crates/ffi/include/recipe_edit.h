#ifndef RECIPE_EDIT_H
#define RECIPE_EDIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Ask for a hard filter on the predicted ingredient list.
 */
#define RE_HARD_FILTER 1

/**
 * Ask for banned-name blocking during step generation.
 */
#define RE_BLACKLIST 2

/**
 * Result code of every fallible call.
 */
typedef enum ReStatus {
  RE_STATUS_OK = 0,
  RE_STATUS_NULL_ARGUMENT = 1,
  RE_STATUS_INVALID_UTF8 = 2,
  RE_STATUS_INVALID_JSON = 3,
  RE_STATUS_IO = 4,
  RE_STATUS_CONFIG = 5,
  RE_STATUS_VALIDATION = 6,
  RE_STATUS_UNKNOWN_CONSTRAINT = 7,
  RE_STATUS_NUMERIC = 8,
  RE_STATUS_CHECKPOINT = 9,
  RE_STATUS_PANIC = 10,
} ReStatus;

/**
 * Substitution-rule baseline and constraint checker over one vocabulary.
 */
typedef struct ReRules ReRules;

/**
 * Trained ingredient editor and step generator.
 */
typedef struct ReSystem ReSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Null-terminated library version; static, never freed.
 */
const char *re_version(void);

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call into the library from the same thread.
 */
const char *re_last_error(void);

/**
 * Releases a string returned through an `out_json` argument.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void re_string_free(char *s);

/**
 * Loads a `vocab.json` written by `build-dataset` together with the bundled
 * constraint tables.
 *
 * # Safety
 * `vocab_path` must be a valid C string and `out` a valid pointer.
 */
enum ReStatus re_rules_load(const char *vocab_path, struct ReRules **out);

/**
 * # Safety
 * `rules` must come from [`re_rules_load`] or be null.
 */
void re_rules_free(struct ReRules *rules);

/**
 * Rule-baseline edit of `recipe_json` for `constraint`. Writes
 * `{"ingredients", "steps", "filtered_out", "truncated"}`.
 *
 * # Safety
 * Pointers must be valid; `out_json` receives a string to free with
 * [`re_string_free`].
 */
enum ReStatus re_rules_edit(const struct ReRules *rules,
                            const char *recipe_json,
                            const char *constraint,
                            char **out_json);

/**
 * Checks a recipe against `constraint`. Writes the number of violations
 * to `out_count` and, when `out_json` is non-null, the details as
 * `{"list": [...], "steps": [[step, name], ...]}`.
 *
 * # Safety
 * Pointers must be valid; `out_json` may be null.
 */
enum ReStatus re_rules_check(const struct ReRules *rules,
                             const char *recipe_json,
                             const char *constraint,
                             size_t *out_count,
                             char **out_json);

/**
 * Loads editor and generator checkpoints written by `train`.
 *
 * # Safety
 * Paths must be valid C strings and `out` a valid pointer.
 */
enum ReStatus re_system_load(const char *editor_path,
                             const char *generator_path,
                             struct ReSystem **out);

/**
 * # Safety
 * `system` must come from [`re_system_load`] or be null.
 */
void re_system_free(struct ReSystem *system);

/**
 * Predicts an edited ingredient list and generates steps for it. `flags`
 * is a bitwise OR of [`RE_HARD_FILTER`] and [`RE_BLACKLIST`]; `max_len`
 * caps the generated tokens.
 *
 * # Safety
 * Pointers must be valid; a handle must not be used from two threads at
 * once.
 */
enum ReStatus re_system_edit(const struct ReSystem *system,
                             const char *recipe_json,
                             const char *constraint,
                             uint32_t flags,
                             size_t max_len,
                             char **out_json);

/**
 * ROUGE-L F-measure between two whitespace/punctuation-tokenized texts.
 *
 * # Safety
 * `pred` and `gold` must be valid C strings and `out` a valid pointer.
 */
enum ReStatus re_rouge_l(const char *pred, const char *gold, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECIPE_EDIT_H */
