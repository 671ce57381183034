#ifndef QUERYWISE_H
#define QUERYWISE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QwStatus {
  QW_STATUS_OK = 0,
  QW_STATUS_NULL_ARGUMENT = 1,
  QW_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed request, taxonomy, script or argument value.
   */
  QW_STATUS_INVALID_INPUT = 3,
  /**
   * The backend ran out of time and degradation is off.
   */
  QW_STATUS_BUDGET_EXHAUSTED = 4,
  /**
   * Malformed tool-call text.
   */
  QW_STATUS_PARSE = 5,
  /**
   * The handle was already finished.
   */
  QW_STATUS_INVALID_STATE = 6,
  QW_STATUS_INTERNAL = 7,
  QW_STATUS_PANIC = 8,
} QwStatus;

typedef enum QwBatchMode {
  QW_BATCH_MODE_HOMOGENEOUS = 0,
  QW_BATCH_MODE_HETEROGENEOUS = 1,
} QwBatchMode;

/**
 * Opaque engine handle with its own single-threaded runtime.
 */
typedef struct QwEngine QwEngine;

/**
 * Opaque incremental tool-call parser.
 */
typedef struct QwStreamParser QwStreamParser;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an engine over the scripted mock backend. Null `taxonomy_json`
 * or `mock_script_json` selects the bundled samples; `timeout_ms` 0 keeps
 * the default budget.
 *
 * # Safety
 * String arguments must be null or valid NUL-terminated strings; `out`
 * must be a valid pointer.
 */
enum QwStatus qw_engine_new(const char *taxonomy_json,
                            const char *mock_script_json,
                            uint64_t timeout_ms,
                            struct QwEngine **out);

/**
 * Creates an engine over an OpenAI-compatible streaming endpoint.
 * `api_key` may be null.
 *
 * # Safety
 * As for [`qw_engine_new`]; `endpoint` and `model` must not be null.
 */
enum QwStatus qw_engine_new_live(const char *taxonomy_json,
                                 const char *endpoint,
                                 const char *api_key,
                                 const char *model,
                                 uint64_t timeout_ms,
                                 struct QwEngine **out);

/**
 * # Safety
 * `engine` must be null or a handle from `qw_engine_new*` not yet freed.
 */
void qw_engine_free(struct QwEngine *engine);

/**
 * Runs one request (`{"query": ..., "profile": ...}` JSON) and writes the
 * result JSON to `out_json`.
 *
 * # Safety
 * `engine` must be a live handle, not used concurrently from another
 * thread; `request_json` a valid string; `out_json` a valid pointer.
 */
enum QwStatus qw_engine_understand(struct QwEngine *engine,
                                   const char *request_json,
                                   char **out_json);

/**
 * Nearest-rank percentile of the latencies recorded for `stage`
 * (`"total"`, `"backend"`, ...), in milliseconds.
 *
 * # Safety
 * `engine` must be a live handle; `stage` a valid string; `out` valid.
 */
enum QwStatus qw_engine_percentile(const struct QwEngine *engine,
                                   const char *stage,
                                   double q,
                                   double *out);

struct QwStreamParser *qw_parser_new(void);

/**
 * Feeds `len` bytes and writes the events they completed as a JSON array.
 * Parse errors are reported as events, not as a failing status.
 *
 * # Safety
 * `parser` must be a live handle; `bytes` must point to `len` readable
 * bytes (or be null with `len` 0); `out_json` must be valid.
 */
enum QwStatus qw_parser_feed(struct QwStreamParser *parser,
                             const uint8_t *bytes,
                             size_t len,
                             char **out_json);

/**
 * Signals end of input. The handle stays valid for [`qw_parser_free`] but
 * accepts no more input.
 *
 * # Safety
 * As for [`qw_parser_feed`].
 */
enum QwStatus qw_parser_finish(struct QwStreamParser *parser, char **out_json);

/**
 * # Safety
 * `parser` must be null or a handle from [`qw_parser_new`] not yet freed.
 */
void qw_parser_free(struct QwStreamParser *parser);

/**
 * Parses a complete response into a JSON array of tool calls.
 *
 * # Safety
 * `text` must be a valid string and `out_json` a valid pointer.
 */
enum QwStatus qw_parse_complete(const char *text, char **out_json);

/**
 * Loss of one example from its target-token log-probabilities.
 *
 * # Safety
 * `logprobs` must point to `len` readable doubles (or be null with `len`
 * 0); `out` must be valid.
 */
enum QwStatus qw_sft_loss(const double *logprobs, size_t len, double *out);

/**
 * # Safety
 * `samples` must point to `len` readable doubles; `out` must be valid.
 */
enum QwStatus qw_nearest_rank(const double *samples, size_t len, double q, double *out);

/**
 * Builds a batch manifest from JSONL `{task_id, prompt, target}` records.
 *
 * # Safety
 * `jsonl` must be a valid string and `out_json` a valid pointer.
 */
enum QwStatus qw_schedule(const char *jsonl,
                          enum QwBatchMode mode,
                          size_t batch_size,
                          uint64_t seed,
                          char **out_json);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void qw_string_free(char *s);

/**
 * Message for the last failure on this thread, or null. Valid until the
 * next call into the library from this thread.
 */
const char *qw_last_error_message(void);

const char *qw_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUERYWISE_H */
