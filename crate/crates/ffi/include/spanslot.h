#ifndef SPANSLOT_H
#define SPANSLOT_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of doubles per CRF step.
 */
#define SPANSLOT_STEP_WIDTH 20

typedef enum SpanslotStatus {
  SPANSLOT_STATUS_OK = 0,
  SPANSLOT_STATUS_NULL_POINTER = 1,
  SPANSLOT_STATUS_INVALID_UTF8 = 2,
  SPANSLOT_STATUS_IO = 3,
  SPANSLOT_STATUS_PARSE = 4,
  SPANSLOT_STATUS_INVALID_ARGUMENT = 5,
  SPANSLOT_STATUS_MODEL = 6,
  SPANSLOT_STATUS_PANIC = 7,
} SpanslotStatus;

/**
 * Opaque extractor handle.
 */
typedef struct SpanslotExtractor SpanslotExtractor;

/**
 * One prediction. `start`/`end` are character offsets, end exclusive, and
 * are meaningful only when `has_span` is true.
 */
typedef struct SpanslotSpan {
  bool has_span;
  size_t start;
  size_t end;
  double confidence;
} SpanslotSpan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *spanslot_version(void);

/**
 * Message for the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on this thread.
 */
const char *spanslot_last_error_message(void);

/**
 * Loads a saved extractor. `embeddings_path` may be null for extractors with
 * their own embedding table.
 *
 * # Safety
 * String arguments must be null or nul-terminated; `out` must be writable.
 */
enum SpanslotStatus spanslot_extractor_load(const char *model_path,
                                            const char *embeddings_path,
                                            struct SpanslotExtractor **out);

/**
 * # Safety
 * `extractor` must be null or a handle from [`spanslot_extractor_load`] not yet freed.
 */
void spanslot_extractor_free(struct SpanslotExtractor *extractor);

/**
 * Slot name; valid for the handle's lifetime. Null for a null handle.
 *
 * # Safety
 * `extractor` must be null or a live handle.
 */
const char *spanslot_extractor_slot(const struct SpanslotExtractor *extractor);

/**
 * Predicts the slot's span in `text`. `utterance_id` selects the vectors
 * for precomputed-embedding extractors and is otherwise only echoed.
 *
 * # Safety
 * `extractor` must be a live handle, strings nul-terminated, `out` writable.
 */
enum SpanslotStatus spanslot_extractor_predict(const struct SpanslotExtractor *extractor,
                                               const char *utterance_id,
                                               const char *text,
                                               bool slot_requested,
                                               struct SpanslotSpan *out);

/**
 * Number of subword tokens the extractor's vocabulary produces for `text`.
 *
 * # Safety
 * `extractor` must be a live handle, `text` nul-terminated, `out` writable.
 */
enum SpanslotStatus spanslot_extractor_token_count(const struct SpanslotExtractor *extractor,
                                                   const char *text,
                                                   size_t *out);

/**
 * Log partition function of a `steps x 20` potential array.
 *
 * # Safety
 * `potentials` must point to `steps * 20` doubles; `out` must be writable.
 */
enum SpanslotStatus spanslot_crf_log_partition(const double *potentials, size_t steps, double *out);

/**
 * Best tag sequence, written as `steps` bytes to `out_tags`. With
 * `grammar_mask` the result is always a well-formed single-span sequence.
 *
 * # Safety
 * `potentials` must point to `steps * 20` doubles; `out_tags` to `steps` writable bytes.
 */
enum SpanslotStatus spanslot_crf_viterbi(const double *potentials,
                                         size_t steps,
                                         bool grammar_mask,
                                         uint8_t *out_tags);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPANSLOT_H */
