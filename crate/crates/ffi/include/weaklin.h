/* C interface to the weaklin checker, machine and profiler. */

#ifndef WEAKLIN_H
#define WEAKLIN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every entry point.
 */
typedef enum WlStatus {
  WlStatus_Ok = 0,
  WlStatus_ParseError = 1,
  WlStatus_TypeError = 2,
  WlStatus_RuntimeError = 3,
  WlStatus_FuelExhausted = 4,
  WlStatus_Inconclusive = 5,
  WlStatus_InvalidArgument = 6,
} WlStatus;

/**
 * An opaque parsed program template.
 */
typedef struct WlProgram WlProgram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parse a program from UTF-8 source text into a new handle.
 *
 * # Safety
 * `src` must be a NUL-terminated string; `out_program` and `out_error`,
 * when non-null, must be writable.
 */
enum WlStatus wl_program_parse(const char *src, struct WlProgram **out_program, char **out_error);

/**
 * Load a built-in program. `variant` is `"weak-linear"` or
 * `"unrestricted"`.
 *
 * # Safety
 * `name` and `variant` must be NUL-terminated strings; `out_program` and
 * `out_error`, when non-null, must be writable.
 */
enum WlStatus wl_program_builtin(const char *name,
                                 const char *variant,
                                 struct WlProgram **out_program,
                                 char **out_error);

/**
 * Release a program handle.
 *
 * # Safety
 * `program` must have come from this library and not be freed twice.
 */
void wl_program_free(struct WlProgram *program);

/**
 * Type-check the configuration at parameter `n` (pass a negative `n` to
 * keep the file's default). On success writes the reconstructed context;
 * on a type error writes the diagnostic.
 *
 * # Safety
 * `program` must be a live handle; the out-parameters, when non-null,
 * must be writable.
 */
enum WlStatus wl_program_check(const struct WlProgram *program, int64_t n, char **out_report);

/**
 * Check and evaluate at parameter `n`. On success writes a JSON object
 * with the terminal variable, its rendered value, the step count and the
 * live store size.
 *
 * # Safety
 * Same contracts as [`wl_program_check`].
 */
enum WlStatus wl_program_run(const struct WlProgram *program,
                             int64_t n,
                             uint64_t fuel,
                             char **out_result);

/**
 * Growth experiment over a built-in program. `ns` points at `ns_len`
 * strictly increasing parameter values; the report is written as JSON.
 *
 * # Safety
 * `name` and `variant` must be NUL-terminated strings; `ns` must point at
 * `ns_len` readable values; out-parameters as in [`wl_program_check`].
 */
enum WlStatus wl_growth_experiment(const char *name,
                                   const char *variant,
                                   const int64_t *ns,
                                   uintptr_t ns_len,
                                   uint64_t fuel,
                                   char **out_report);

/**
 * Release a string produced by this library.
 *
 * # Safety
 * `s` must have been written by this library and not freed twice.
 */
void wl_string_free(char *s);

/**
 * Library version as a static string; do not free.
 */
const char *wl_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WEAKLIN_H */
