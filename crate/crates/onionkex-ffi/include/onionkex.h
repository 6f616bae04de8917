#ifndef ONIONKEX_H
#define ONIONKEX_H

/* Generated by cbindgen from onionkex-ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of a fallible call.
typedef enum OnionkexStatus {
  // The call succeeded.
  ONIONKEX_STATUS_OK = 0,
  // A required pointer argument was NULL.
  ONIONKEX_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  ONIONKEX_STATUS_INVALID_UTF8 = 2,
  // A configuration document failed to parse or validate.
  ONIONKEX_STATUS_INVALID_CONFIG = 3,
  // The run itself failed.
  ONIONKEX_STATUS_RUN_FAILED = 4,
  // A scalar argument was out of range.
  ONIONKEX_STATUS_INVALID_ARGUMENT = 5,
} OnionkexStatus;

// An established session: the full run, kept opaque to C callers.
typedef struct OnionkexSession OnionkexSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// ABI revision of this header; bumped on any breaking change.
uint32_t onionkex_abi_version(void);

// Returns the most recent error message on this thread, or NULL when the
// last call succeeded. The caller owns the string.
char *onionkex_last_error_message(void);

// Releases a string returned by this library. NULL is ignored.
void onionkex_string_free(char *string);

// Runs one key-establishment session described by `setup_json` (the same
// document the CLI accepts). Returns NULL on failure with `status` and the
// last-error message set.
//
// # Safety
//
// `setup_json` must be NULL or a valid NUL-terminated string; `status` must
// be NULL or a valid pointer.
struct OnionkexSession *onionkex_session_run(const char *setup_json, enum OnionkexStatus *status);

// Releases a session handle. NULL is ignored.
void onionkex_session_free(struct OnionkexSession *session);

// Whether both endpoints reconstructed the same key and the encrypted
// probe round-tripped. Returns false for NULL.
bool onionkex_session_keys_match(const struct OnionkexSession *session);

// The session report as pretty-printed JSON. Returns NULL for NULL input.
char *onionkex_session_report_json(const struct OnionkexSession *session);

// The adversary observation log as JSON lines. Returns NULL for NULL input
// or if encoding fails.
char *onionkex_session_observations_jsonl(const struct OnionkexSession *session);

// Runs a linkage sweep described by `sweep_json` (the same document the
// CLI accepts) and returns the result as CSV. Returns NULL on failure.
//
// # Safety
//
// `sweep_json` must be NULL or a valid NUL-terminated string; `status`
// must be NULL or a valid pointer.
char *onionkex_experiment_csv(const char *sweep_json, enum OnionkexStatus *status);

// Analytic all-circuit linkage probability with fresh guards:
// `fraction^(2 * circuits)`. Writes to `out`; fails on out-of-range input.
//
// # Safety
//
// `out` must be NULL or a valid pointer.
enum OnionkexStatus onionkex_multi_circuit_bound(double fraction, uint32_t circuits, double *out);

// Analytic all-circuit linkage probability when only the responding
// endpoint pins its guard: `fraction^(circuits + 1)`.
//
// # Safety
//
// `out` must be NULL or a valid pointer.
enum OnionkexStatus onionkex_pinned_service_bound(double fraction, uint32_t circuits, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ONIONKEX_H */
