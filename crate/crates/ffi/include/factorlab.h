#ifndef FACTORLAB_H
#define FACTORLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of every exported function.
 */
typedef enum FlStatus {
  FL_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  FL_STATUS_NULL_POINTER = 1,
  /**
   * A parameter, shape or configuration was rejected.
   */
  FL_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A numerical failure: divergence, singular system, non-finite value.
   */
  FL_STATUS_NUMERICAL = 3,
  /**
   * File or serialization failure.
   */
  FL_STATUS_IO = 4,
  /**
   * A caller-provided buffer is too small.
   */
  FL_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * An internal panic was caught at the boundary.
   */
  FL_STATUS_PANIC = 6,
} FlStatus;

/**
 * Simulated path ensemble.
 */
typedef struct FlEnsemble FlEnsemble;

/**
 * Fitted Clark-Ocone integrand of a terminal functional.
 */
typedef struct FlRepresenter FlRepresenter;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null if none. Owned by the
 * library.
 */
const char *fl_last_error(void);

/**
 * Releases a string returned by the library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void fl_string_free(char *s);

/**
 * Brownian ensemble of `paths` paths on `steps` uniform steps over
 * `[0, horizon]`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FlStatus fl_simulate_brownian(double horizon,
                                   size_t steps,
                                   size_t paths,
                                   uint64_t seed,
                                   struct FlEnsemble **out);

/**
 * Fractional Brownian motion with Hurst index `hurst` in `(0, 1)`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FlStatus fl_simulate_fbm(double horizon,
                              size_t steps,
                              double hurst,
                              size_t paths,
                              uint64_t seed,
                              struct FlEnsemble **out);

/**
 * # Safety
 * `e` must be null or a handle from this library, not freed before.
 */
void fl_ensemble_free(struct FlEnsemble *e);

/**
 * Number of paths `M` and steps `N`; the path matrix is `M x (N + 1)`.
 *
 * # Safety
 * `e` must be a live handle; `paths` and `steps` valid pointers.
 */
enum FlStatus fl_ensemble_shape(const struct FlEnsemble *e, size_t *paths, size_t *steps);

/**
 * Copies the path matrix row-major into `buf`, which must hold
 * `M * (N + 1)` values.
 *
 * # Safety
 * `e` must be a live handle and `buf` valid for `len` writes.
 */
enum FlStatus fl_ensemble_copy_paths(const struct FlEnsemble *e, double *buf, size_t len);

/**
 * Writes the ensemble in the binary container format.
 *
 * # Safety
 * `e` must be a live handle and `path` a nul-terminated string.
 */
enum FlStatus fl_ensemble_write_binary(const struct FlEnsemble *e, const char *path);

/**
 * Reads an ensemble written by [`fl_ensemble_write_binary`].
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum FlStatus fl_ensemble_read_binary(const char *path, struct FlEnsemble **out);

/**
 * Fits the Clark-Ocone integrand of the functional whose per-path values
 * are `values[0..M]`, on the basis of `bins` time bins and polynomials of
 * degree `degree`, with the Brownian energy and automatic ridge.
 *
 * # Safety
 * `e` must be a live handle, `values` valid for `len` reads and `out` a
 * valid pointer.
 */
enum FlStatus fl_fit_representer(const struct FlEnsemble *e,
                                 const double *values,
                                 size_t len,
                                 size_t bins,
                                 size_t degree,
                                 struct FlRepresenter **out);

/**
 * # Safety
 * `r` must be null or a handle from this library, not freed before.
 */
void fl_representer_free(struct FlRepresenter *r);

/**
 * Sample mean of the functional and the number of basis coefficients.
 *
 * # Safety
 * `r` must be a live handle; `mean` and `count` valid pointers.
 */
enum FlStatus fl_representer_info(const struct FlRepresenter *r, double *mean, size_t *count);

/**
 * Copies the basis coefficients into `buf`.
 *
 * # Safety
 * `r` must be a live handle and `buf` valid for `len` writes.
 */
enum FlStatus fl_representer_copy_coefficients(const struct FlRepresenter *r,
                                               double *buf,
                                               size_t len);

/**
 * Evaluates the fitted integrand on `e`, writing the `M x N` matrix
 * row-major into `buf`.
 *
 * # Safety
 * Both handles must be live and `buf` valid for `len` writes.
 */
enum FlStatus fl_representer_evaluate(const struct FlRepresenter *r,
                                      const struct FlEnsemble *e,
                                      double *buf,
                                      size_t len);

/**
 * JSON serialization of the representer; release with [`fl_string_free`].
 *
 * # Safety
 * `r` must be a live handle and `out` a valid pointer.
 */
enum FlStatus fl_representer_to_json(const struct FlRepresenter *r, char **out);

/**
 * Runs the checks of a JSON experiment config held in memory, without
 * writing any file. `report` receives the report JSON and `passed` whether
 * every check passed.
 *
 * # Safety
 * `config_json` must be a nul-terminated string; `report` and `passed`
 * valid pointers.
 */
enum FlStatus fl_run_config(const char *config_json, char **report, bool *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FACTORLAB_H */
