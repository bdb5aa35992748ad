#ifndef SKETCHLRA_H
#define SKETCHLRA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SlraStatus {
  SlraStatus_Ok = 0,
  SlraStatus_NullPointer = 1,
  SlraStatus_Shape = 2,
  SlraStatus_Parse = 3,
  SlraStatus_InvalidParam = 4,
  SlraStatus_Degenerate = 5,
  SlraStatus_Numerical = 6,
  SlraStatus_Index = 7,
  SlraStatus_Io = 8,
  SlraStatus_Panic = 9,
} SlraStatus;

/**
 * Solver used by [`slra_decompose`] and the finalizers.
 */
typedef enum SlraMode {
  SlraMode_RankK = 0,
  SlraMode_Quadratic = 1,
  SlraMode_Cubic = 2,
} SlraMode;

/**
 * CP factors `U` (`n1 × rank`), `V` (`n2 × rank`), `W` (`n3 × rank`).
 */
typedef struct SlraFactors SlraFactors;

/**
 * Parameters of the Frobenius pipeline.
 */
typedef struct SlraParams SlraParams;

/**
 * Turnstile stream state.
 */
typedef struct SlraStream SlraStream;

/**
 * Third-order tensor.
 */
typedef struct SlraTensor SlraTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *slra_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *slra_version(void);

/**
 * Force sequential execution inside the library.
 */
void slra_set_reproducible(bool on);

/**
 * Zero tensor with dimensions `dims[0..3]`.
 *
 * # Safety
 * `dims` points to three values; `out` is writable.
 */
enum SlraStatus slra_tensor_new(const uintptr_t *dims, struct SlraTensor **out);

/**
 * Dense tensor from `n1·n2·n3` values with entry `(i, j, l)` at `(i·n2 + j)·n3 + l`.
 *
 * # Safety
 * `dims` points to three values, `data` to `len` values; `out` is writable.
 */
enum SlraStatus slra_tensor_from_dense(const uintptr_t *dims,
                                       const double *data,
                                       uintptr_t len,
                                       struct SlraTensor **out);

/**
 * Sparse tensor from `nnz` coordinate entries; duplicates are summed.
 *
 * # Safety
 * `dims` points to three values; `is`, `js`, `ls`, `vals` to `nnz` values each; `out` is writable.
 */
enum SlraStatus slra_tensor_from_entries(const uintptr_t *dims,
                                         const uintptr_t *is,
                                         const uintptr_t *js,
                                         const uintptr_t *ls,
                                         const double *vals,
                                         uintptr_t nnz,
                                         struct SlraTensor **out);

/**
 * Read a `.tns` file.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum SlraStatus slra_tensor_read_tns(const char *path, struct SlraTensor **out);

/**
 * # Safety
 * `t` is a live tensor handle; `dims` has room for three values.
 */
enum SlraStatus slra_tensor_dims(const struct SlraTensor *t, uintptr_t *dims);

/**
 * # Safety
 * `t` is a live tensor handle; `out` is writable.
 */
enum SlraStatus slra_tensor_fro_norm2(const struct SlraTensor *t, double *out);

/**
 * # Safety
 * `t` is null or a handle not yet freed.
 */
void slra_tensor_free(struct SlraTensor *t);

/**
 * Parameters with rank `k`, accuracy `eps` and root `seed`; other fields take defaults.
 *
 * # Safety
 * `out` is writable.
 */
enum SlraStatus slra_params_new(uintptr_t k, double eps, uint64_t seed, struct SlraParams **out);

/**
 * Set the number of independent trials (at least 1).
 *
 * # Safety
 * `p` is a live params handle.
 */
enum SlraStatus slra_params_set_trials(struct SlraParams *p, uintptr_t trials);

/**
 * Set ALS restarts and sweeps for the rank-`k` solver.
 *
 * # Safety
 * `p` is a live params handle.
 */
enum SlraStatus slra_params_set_als(struct SlraParams *p, uintptr_t restarts, uintptr_t sweeps);

/**
 * # Safety
 * `p` is null or a handle not yet freed.
 */
void slra_params_free(struct SlraParams *p);

/**
 * Frobenius-norm low-rank approximation. Writes the factors and their squared residual.
 *
 * # Safety
 * `t` and `p` are live handles; `out` and `cost_fro2` are writable (`cost_fro2` may be null).
 */
enum SlraStatus slra_decompose(const struct SlraTensor *t,
                               const struct SlraParams *p,
                               enum SlraMode mode,
                               struct SlraFactors **out,
                               double *cost_fro2);

/**
 * Entrywise ℓ1 bicriteria approximation of target rank `k`.
 *
 * # Safety
 * `t` is a live handle; `out` is writable; `cost_l1` is writable or null.
 */
enum SlraStatus slra_decompose_l1(const struct SlraTensor *t,
                                  uintptr_t k,
                                  uint64_t seed,
                                  struct SlraFactors **out,
                                  double *cost_l1);

/**
 * # Safety
 * `f` is a live factors handle; `out` is writable.
 */
enum SlraStatus slra_factors_rank(const struct SlraFactors *f, uintptr_t *out);

/**
 * Copy factor `which` (0 = U, 1 = V, 2 = W) row-major into `buf`, which
 * must hold `n_which · rank` values.
 *
 * # Safety
 * `f` is a live handle; `buf` has room for `len` values.
 */
enum SlraStatus slra_factors_copy(const struct SlraFactors *f,
                                  uintptr_t which,
                                  double *buf,
                                  uintptr_t len);

/**
 * Squared Frobenius residual of `f` against `t`.
 *
 * # Safety
 * `t`, `f` are live handles; `out` is writable.
 */
enum SlraStatus slra_residual_fro2(const struct SlraTensor *t,
                                   const struct SlraFactors *f,
                                   double *out);

/**
 * # Safety
 * `f` is null or a handle not yet freed.
 */
void slra_factors_free(struct SlraFactors *f);

/**
 * New stream over an `n1 × n2 × n3` tensor. Uses trial 0 of `p`'s seed.
 *
 * # Safety
 * `dims` points to three values; `p` is a live handle; `out` is writable.
 */
enum SlraStatus slra_stream_new(const uintptr_t *dims,
                                const struct SlraParams *p,
                                struct SlraStream **out);

/**
 * Apply `A[i, j, l] += delta`.
 *
 * # Safety
 * `s` is a live stream handle.
 */
enum SlraStatus slra_stream_update(struct SlraStream *s,
                                   uintptr_t i,
                                   uintptr_t j,
                                   uintptr_t l,
                                   double delta);

/**
 * Apply `n` updates in order; stops at the first invalid one.
 *
 * # Safety
 * `s` is a live handle; the four arrays hold `n` values each.
 */
enum SlraStatus slra_stream_update_batch(struct SlraStream *s,
                                         const uintptr_t *is,
                                         const uintptr_t *js,
                                         const uintptr_t *ls,
                                         const double *deltas,
                                         uintptr_t n);

/**
 * Words of state held by the stream.
 *
 * # Safety
 * `s` is a live handle; `out` is writable.
 */
enum SlraStatus slra_stream_space_words(const struct SlraStream *s, uintptr_t *out);

/**
 * Solve from the stream sketches: `RankK` runs ALS, `Cubic` the Tucker regression.
 *
 * # Safety
 * `s` is a live handle; `out` is writable.
 */
enum SlraStatus slra_stream_finalize(const struct SlraStream *s,
                                     enum SlraMode mode,
                                     struct SlraFactors **out);

/**
 * # Safety
 * `s` is null or a handle not yet freed.
 */
void slra_stream_free(struct SlraStream *s);

/**
 * Simulate the distributed protocol over `count` partitions whose sum is
 * the input. Writes the collected factors and the total words sent.
 *
 * # Safety
 * `parts` holds `count` live tensor handles; `p` is live; `out` and `words` are writable.
 */
enum SlraStatus slra_distsim_run(const struct SlraTensor *const *parts,
                                 uintptr_t count,
                                 const struct SlraParams *p,
                                 enum SlraMode mode,
                                 struct SlraFactors **out,
                                 uintptr_t *words);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SKETCHLRA_H */
