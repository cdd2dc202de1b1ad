#ifndef KOOPMAN_SVD_H
#define KOOPMAN_SVD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KsvdStatus {
  KSVD_STATUS_OK = 0,
  KSVD_STATUS_NULL_POINTER = 1,
  KSVD_STATUS_INVALID_ARGUMENT = 2,
  KSVD_STATUS_NUMERIC = 3,
  KSVD_STATUS_ARTIFACT = 4,
  KSVD_STATUS_PANIC = 5,
} KsvdStatus;

typedef enum KsvdVariant {
  KSVD_VARIANT_VANILLA = 0,
  KSVD_VARIANT_CKAE = 1,
  KSVD_VARIANT_ISVD = 2,
  KSVD_VARIANT_USVD = 3,
} KsvdVariant;

// Opaque model handle.
typedef struct KsvdModel KsvdModel;

// Cylinder-wake simulation parameters.
typedef struct KsvdOdeSpec {
  double mu;
  double omega;
  double amp;
  double lam;
  double dt;
  uintptr_t n_steps;
  double x0[3];
} KsvdOdeSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or null. The pointer
// stays valid until the next failing call on this thread.
const char *ksvd_last_error_message(void);

// Default simulation parameters (1500 samples, dt = 0.1).
struct KsvdOdeSpec ksvd_ode_spec_default(void);

// Fresh model with default loss weights and windows. `out` receives a
// handle to release with [`ksvd_model_free`].
//
// # Safety
// `out` must be a valid pointer to writable storage for one pointer.
enum KsvdStatus ksvd_model_new(enum KsvdVariant variant,
                               uintptr_t latent_dim,
                               uintptr_t hidden_width,
                               uint64_t seed,
                               struct KsvdModel **out);

// Loads a JSON checkpoint.
//
// # Safety
// `path` must be a nul-terminated string; `out` as in [`ksvd_model_new`].
enum KsvdStatus ksvd_model_load(const char *path, struct KsvdModel **out);

// Writes a JSON checkpoint.
//
// # Safety
// `model` must come from this library and not be freed; `path` must be a
// nul-terminated string.
enum KsvdStatus ksvd_model_save(const struct KsvdModel *model, const char *path);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle from this library not yet freed.
void ksvd_model_free(struct KsvdModel *model);

// Variant of a model; [`KsvdVariant::Vanilla`] for a null handle.
//
// # Safety
// `model` must be null or a live handle.
enum KsvdVariant ksvd_model_variant(const struct KsvdModel *model);

// State dimension N; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
uintptr_t ksvd_model_state_dim(const struct KsvdModel *model);

// Latent dimension M; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
uintptr_t ksvd_model_latent_dim(const struct KsvdModel *model);

// Predicts `horizon` states from `x0` (N values, raw coordinates) into
// `out`, row-major, `horizon * N` values.
//
// # Safety
// `x0` must hold N readable values and `out` `out_len` writable ones.
enum KsvdStatus ksvd_model_predict(const struct KsvdModel *model,
                                   const double *x0,
                                   uintptr_t horizon,
                                   double *out,
                                   uintptr_t out_len);

// Eigenvalues of the materialized `K` into `re`/`im` (M values each) and
// the largest distance of their moduli from 1 into `max_deviation`.
//
// # Safety
// `re` and `im` must hold `len` writable values; `max_deviation` may be
// null.
enum KsvdStatus ksvd_model_spectrum(const struct KsvdModel *model,
                                    double *re,
                                    double *im,
                                    uintptr_t len,
                                    double *max_deviation);

// Simulates the cylinder-wake system into `out`, row-major,
// `spec.n_steps * 3` values.
//
// # Safety
// `spec` must be readable and `out` must hold `out_len` writable values.
enum KsvdStatus ksvd_simulate(const struct KsvdOdeSpec *spec, double *out, uintptr_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KOOPMAN_SVD_H */
