/* C interface to the iidgen exact-sampling engine. */

#ifndef IIDGEN_H
#define IIDGEN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function. The numeric values
 * match the CLI exit codes where a correspondence exists.
 */
typedef enum IidgenStatus {
  IIDGEN_STATUS_OK = 0,
  /**
   * Configuration rejected (parse error, unknown key, bad value).
   */
  IIDGEN_STATUS_CONFIG = 2,
  /**
   * Dataset or artifact problem.
   */
  IIDGEN_STATUS_DATA = 3,
  /**
   * Numerical failure (degenerate scale, minorization too small, ...).
   */
  IIDGEN_STATUS_NUMERICAL = 4,
  /**
   * Internal error; see `iidgen_last_error`.
   */
  IIDGEN_STATUS_INTERNAL = 5,
  /**
   * A required pointer argument was null or a buffer was too small.
   */
  IIDGEN_STATUS_BAD_ARGUMENT = 6,
} IidgenStatus;

/**
 * An immutable set of i.i.d. draws produced by the engine.
 */
typedef struct IidgenSampleSet IidgenSampleSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for this thread; valid until the next failing call.
 * Never null.
 */
const char *iidgen_last_error(void);

/**
 * Library version as a static string.
 */
const char *iidgen_version(void);

/**
 * Run the full pipeline (pilot when configured, weight estimation,
 * sampling) for a JSON run configuration; the schema is the same one the
 * CLI consumes. On success `*out` owns the sample set and must be released
 * with `iidgen_samples_free`.
 *
 * # Safety
 * `config_json` must point to a valid NUL-terminated string and `out` to a
 * writable pointer slot; both must outlive the call.
 */
enum IidgenStatus iidgen_sample_json(const char *config_json, struct IidgenSampleSet **out);

/**
 * Number of draws in the set.
 *
 * # Safety
 * `set` must be a live pointer from `iidgen_sample_json`.
 */
uintptr_t iidgen_samples_count(const struct IidgenSampleSet *set);

/**
 * Dimension of each draw.
 *
 * # Safety
 * `set` must be a live pointer from `iidgen_sample_json`.
 */
uintptr_t iidgen_samples_dim(const struct IidgenSampleSet *set);

/**
 * Shell count after any doubling.
 *
 * # Safety
 * `set` must be a live pointer from `iidgen_sample_json`.
 */
uintptr_t iidgen_samples_final_shells(const struct IidgenSampleSet *set);

/**
 * Copy the draws row-major into `buffer` (count * dim doubles).
 *
 * # Safety
 * `set` must be live and `buffer` must point to at least `len` writable
 * doubles.
 */
enum IidgenStatus iidgen_samples_copy(const struct IidgenSampleSet *set,
                                      double *buffer,
                                      uintptr_t len);

/**
 * Per-draw diagnostics: selected shell (1-based), coalescence time, and the
 * mixture component index. Null out-pointers are skipped.
 *
 * # Safety
 * `set` must be live; non-null out-pointers must be writable.
 */
enum IidgenStatus iidgen_samples_row_meta(const struct IidgenSampleSet *set,
                                          uintptr_t row,
                                          uint64_t *shell_index,
                                          uint64_t *t_coalesce,
                                          uint64_t *component);

/**
 * Release a sample set. Null is a no-op; a pointer must not be freed twice.
 *
 * # Safety
 * `set` must be null or a pointer previously returned by
 * `iidgen_sample_json` that has not been freed.
 */
void iidgen_samples_free(struct IidgenSampleSet *set);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* IIDGEN_H */
