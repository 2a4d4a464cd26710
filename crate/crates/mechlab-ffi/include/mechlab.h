#ifndef MECHLAB_H
#define MECHLAB_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every API call.
 */
typedef enum MechlabStatus {
  /**
   * Success.
   */
  MECHLAB_STATUS_OK = 0,
  /**
   * Null pointer, unparseable input, or out-of-range index.
   */
  MECHLAB_STATUS_INVALID_ARGUMENT = 1,
  /**
   * The request would exceed an enumeration size gate.
   */
  MECHLAB_STATUS_SIZE_GATE = 2,
  /**
   * The operation ran and failed; see mechlab_last_error.
   */
  MECHLAB_STATUS_FAILED = 3,
} MechlabStatus;

/**
 * Opaque match-matrix handle.
 */
typedef struct MechlabMatrix MechlabMatrix;

/**
 * Opaque mechanism handle.
 */
typedef struct MechlabMechanism MechlabMechanism;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Thread-local message describing the most recent failure.  The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *mechlab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mechlab_version(void);

/**
 * Parses a mechanism descriptor such as `alg2`, `sd:nat`, `rsd1`, or
 * `anon(alg2)` into a handle.
 *
 * # Safety
 * `descriptor` must be a valid NUL-terminated string and `out` a valid
 * pointer.
 */
enum MechlabStatus mechlab_mechanism_parse(const char *descriptor, struct MechlabMechanism **out);

/**
 * Releases a mechanism handle.  Null is ignored.
 *
 * # Safety
 * `mech` must be null or a pointer from `mechlab_mechanism_parse` that
 * has not been freed yet.
 */
void mechlab_mechanism_free(struct MechlabMechanism *mech);

/**
 * Evaluates a mechanism on a profile given in line format
 * (`n m | s1:2,0,1 | ... | c1:...`).  Oversized mixtures fall back to
 * seeded sampling.
 *
 * # Safety
 * `mech` must be a live mechanism handle, `profile` a valid string, and
 * `out` a valid pointer.
 */
enum MechlabStatus mechlab_evaluate(const struct MechlabMechanism *mech,
                                    const char *profile,
                                    uint64_t seed,
                                    struct MechlabMatrix **out);

/**
 * Releases a matrix handle.  Null is ignored.
 *
 * # Safety
 * `matrix` must be null or a pointer from `mechlab_evaluate` that has
 * not been freed yet.
 */
void mechlab_matrix_free(struct MechlabMatrix *matrix);

/**
 * Writes the matrix dimensions (students, schools).
 *
 * # Safety
 * All pointers must be valid.
 */
enum MechlabStatus mechlab_matrix_dims(const struct MechlabMatrix *matrix,
                                       uintptr_t *n,
                                       uintptr_t *m);

/**
 * Reads one match probability.
 *
 * # Safety
 * `matrix` must be a live matrix handle and `value` a valid pointer.
 */
enum MechlabStatus mechlab_matrix_get(const struct MechlabMatrix *matrix,
                                      uintptr_t student,
                                      uintptr_t school,
                                      double *value);

/**
 * Writes the total stability violation and the waste (unassigned mass)
 * of the evaluated outcome.
 *
 * # Safety
 * `matrix` must be a live matrix handle; `stv` and `waste_out` must be
 * valid pointers.
 */
enum MechlabStatus mechlab_matrix_stats(const struct MechlabMatrix *matrix,
                                        double *stv,
                                        double *waste_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MECHLAB_H */
