#ifndef TIMEM_H
#define TIMEM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Skip the relevance gate for this recall.
 */
#define TIMEM_RECALL_NO_GATE 1

/**
 * Let the planner choose the complexity.
 */
#define TIMEM_COMPLEXITY_AUTO -1

typedef enum TimemStatus {
  TIMEM_STATUS_OK = 0,
  TIMEM_STATUS_NULL_ARGUMENT = 1,
  TIMEM_STATUS_INVALID_UTF8 = 2,
  TIMEM_STATUS_INVALID_ARGUMENT = 3,
  TIMEM_STATUS_DATA = 4,
  TIMEM_STATUS_BACKEND = 5,
  TIMEM_STATUS_UNKNOWN_USER = 6,
  TIMEM_STATUS_IO = 7,
  TIMEM_STATUS_PANIC = 8,
} TimemStatus;

/**
 * Opaque engine handle.
 */
typedef struct TimemEngine TimemEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Opens an engine. `data_dir` may be null for an in-memory engine.
 * `config_toml` may be null for the defaults.
 *
 * # Safety
 * String arguments must be null or NUL-terminated. `out` must be writable.
 */
enum TimemStatus timem_engine_open(const char *data_dir,
                                   const char *config_toml,
                                   struct TimemEngine **out);

/**
 * # Safety
 * `engine` must be null or a handle from [`timem_engine_open`] not yet freed.
 */
void timem_engine_free(struct TimemEngine *engine);

/**
 * Ingests one turn. `ts` is RFC 3339.
 *
 * # Safety
 * All string arguments must be NUL-terminated.
 */
enum TimemStatus timem_ingest_turn(const struct TimemEngine *engine_ptr,
                                   const char *user_id,
                                   const char *session_id,
                                   const char *turn_id,
                                   const char *ts,
                                   const char *user_text,
                                   const char *assistant_text);

/**
 * Ingests a whole transcript document and flushes the user.
 *
 * # Safety
 * `json` must be NUL-terminated.
 */
enum TimemStatus timem_ingest_transcript(const struct TimemEngine *engine_ptr, const char *json);

/**
 * Closes every open group for the user.
 *
 * # Safety
 * `user_id` must be NUL-terminated.
 */
enum TimemStatus timem_flush(const struct TimemEngine *engine_ptr, const char *user_id);

/**
 * Recalls memories for `question` and writes the result as JSON to `out`.
 * `ts` may be null. `complexity` is 0, 1, 2 or [`TIMEM_COMPLEXITY_AUTO`].
 *
 * # Safety
 * String arguments must be NUL-terminated (`ts` may be null). `out` must be
 * writable; the string it receives is freed with [`timem_string_free`].
 */
enum TimemStatus timem_recall_json(const struct TimemEngine *engine_ptr,
                                   const char *user_id,
                                   const char *question,
                                   const char *ts,
                                   uint32_t flags,
                                   int32_t complexity,
                                   char **out);

/**
 * Writes the structural report for the user's tree as JSON to `out`.
 *
 * # Safety
 * `user_id` must be NUL-terminated and `out` writable.
 */
enum TimemStatus timem_validate_json(const struct TimemEngine *engine_ptr,
                                     const char *user_id,
                                     char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void timem_string_free(char *s);

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call on the same thread.
 */
const char *timem_last_error_message(void);

const char *timem_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TIMEM_H */
