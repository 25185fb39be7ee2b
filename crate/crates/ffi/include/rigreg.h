#ifndef RIGREG_H
#define RIGREG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RigregStatus {
  RIGREG_STATUS_OK = 0,
  RIGREG_STATUS_NULL_POINTER = 1,
  RIGREG_STATUS_INVALID_ARGUMENT = 2,
  RIGREG_STATUS_DIMENSION_MISMATCH = 3,
  RIGREG_STATUS_ILL_POSED = 4,
  RIGREG_STATUS_NON_FINITE = 5,
  RIGREG_STATUS_DEGENERATE_RANK = 6,
  RIGREG_STATUS_CONTRACT_VIOLATION = 7,
  RIGREG_STATUS_DIVERGED = 8,
  RIGREG_STATUS_PARSE = 9,
  RIGREG_STATUS_IO = 10,
  RIGREG_STATUS_BUFFER_TOO_SMALL = 11,
  RIGREG_STATUS_PANIC = 12,
} RigregStatus;

typedef enum RigregVariant {
  /*
   REG-ADMM.
   */
  RIGREG_VARIANT_NONCONVEX = 0,
  /*
   C-ADMM.
   */
  RIGREG_VARIANT_CONVEX = 1,
} RigregVariant;

typedef enum RigregTermination {
  RIGREG_TERMINATION_CONVERGED = 0,
  RIGREG_TERMINATION_MAX_ITERS = 1,
  RIGREG_TERMINATION_OSCILLATING = 2,
} RigregTermination;

/*
 Which matrix of a result to copy out.
 */
typedef enum RigregMatrix {
  RIGREG_MATRIX_G = 0,
  RIGREG_MATRIX_H = 1,
  RIGREG_MATRIX_LAMBDA = 2,
} RigregMatrix;

/*
 Registration instance together with its data matrix.
 */
typedef struct RigregInstance RigregInstance;

/*
 Final iterate and trace of a solver run.
 */
typedef struct RigregResult RigregResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *rigreg_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *rigreg_version(void);

/*
 Generates a synthetic instance. `overlap == 0` puts every node in every
 patch; otherwise patches are chained windows sharing `overlap` nodes.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum RigregStatus rigreg_instance_generate(size_t d,
                                           size_t n,
                                           size_t m,
                                           size_t overlap,
                                           double sigma,
                                           uint64_t seed,
                                           struct RigregInstance **out);

/*
 Parses an instance from its JSON representation.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum RigregStatus rigreg_instance_from_json(const char *json, struct RigregInstance **out);

/*
 JSON representation of an instance, freed with [`rigreg_string_free`].

 # Safety
 `inst` must be a live handle; `out` must be writable.
 */
enum RigregStatus rigreg_instance_to_json(const struct RigregInstance *inst, char **out);

/*
 # Safety
 `inst` must be null or a handle not yet freed.
 */
void rigreg_instance_free(struct RigregInstance *inst);

/*
 Block size `d` and matrix side `Md`.

 # Safety
 `inst` must be a live handle; `d` and `md` must be writable.
 */
enum RigregStatus rigreg_instance_dims(const struct RigregInstance *inst, size_t *d, size_t *md);

/*
 Copies the data matrix `C` (row-major, `Md*Md` values).

 # Safety
 `out` must point to at least `len` writable doubles.
 */
enum RigregStatus rigreg_instance_data_matrix(const struct RigregInstance *inst,
                                              double *out,
                                              size_t len);

/*
 Copies the ground-truth Gram matrix `G0`.

 # Safety
 `out` must point to at least `len` writable doubles.
 */
enum RigregStatus rigreg_instance_ground_truth_gram(const struct RigregInstance *inst,
                                                    double *out,
                                                    size_t len);

/*
 Noise threshold `η` of the instance's clean data matrix.

 # Safety
 `inst` must be a live handle; `out` must be writable.
 */
enum RigregStatus rigreg_tightness_eta(const struct RigregInstance *inst, double *out);

/*
 Clean-data penalty bound for the identity start.

 # Safety
 `inst` must be a live handle; `out` must be writable.
 */
enum RigregStatus rigreg_clean_rho_bound(const struct RigregInstance *inst, double *out);

/*
 Runs the solver from `H = I`, `Λ = 0`. `eps <= 0` selects the default
 tolerance `1e-9 Md`.

 # Safety
 `inst` must be a live handle; `out` must be writable.
 */
enum RigregStatus rigreg_solve(const struct RigregInstance *inst,
                               enum RigregVariant variant,
                               double rho,
                               size_t max_iters,
                               double eps,
                               struct RigregResult **out);

/*
 # Safety
 `result` must be null or a handle not yet freed.
 */
void rigreg_result_free(struct RigregResult *result);

/*
 Iteration count, termination reason and final objective `Tr(C G)`.

 # Safety
 `result` must be a live handle; the outputs must be writable.
 */
enum RigregStatus rigreg_result_summary(const struct RigregResult *result,
                                        size_t *iterations,
                                        enum RigregTermination *termination,
                                        double *objective);

/*
 Copies `G`, `H` or `Λ` of the final iterate.

 # Safety
 `out` must point to at least `len` writable doubles.
 */
enum RigregStatus rigreg_result_matrix(const struct RigregResult *result,
                                       enum RigregMatrix which,
                                       double *out,
                                       size_t len);

/*
 Trace as CSV text, freed with [`rigreg_string_free`].

 # Safety
 `result` must be a live handle; `out` must be writable.
 */
enum RigregStatus rigreg_result_trace_csv(const struct RigregResult *result, char **out);

/*
 KKT residual of the orthogonal registration problem at the final `H`.

 # Safety
 Both handles must be live and belong together; `out` must be writable.
 */
enum RigregStatus rigreg_kkt_residual(const struct RigregInstance *inst,
                                      const struct RigregResult *result,
                                      double *out);

/*
 Releases a string returned by this library.

 # Safety
 `s` must be null or a string from `rigreg_*` not yet freed.
 */
void rigreg_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RIGREG_H */
