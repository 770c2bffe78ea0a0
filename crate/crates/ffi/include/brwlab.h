#ifndef BRWLAB_H
#define BRWLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum BrwStatus {
  BRW_STATUS_OK = 0,
  BRW_STATUS_NULL_POINTER = 1,
  BRW_STATUS_INVALID_ARGUMENT = 2,
  BRW_STATUS_UNSUPPORTED_LAW = 3,
  BRW_STATUS_EXTINCT = 4,
  BRW_STATUS_POPULATION_EXPLOSION = 5,
  BRW_STATUS_IO = 6,
  BRW_STATUS_FORMAT = 7,
  BRW_STATUS_NUMERICAL = 8,
  BRW_STATUS_INTERNAL = 9,
} BrwStatus;

// Path functionals accepted by [`brw_gibbs_trajectory_mean`].
typedef enum BrwFunctional {
  BRW_FUNCTIONAL_ONE = 0,
  BRW_FUNCTIONAL_ENDPOINT = 1,
  BRW_FUNCTIONAL_SUP = 2,
  BRW_FUNCTIONAL_TIME_AVERAGE = 3,
  BRW_FUNCTIONAL_POSITIVE_FRACTION = 4,
} BrwFunctional;

// Opaque reproduction law.
typedef struct BrwLaw BrwLaw;

// Opaque simulated tree.
typedef struct BrwPopulation BrwPopulation;

// Opaque associated random walk.
typedef struct BrwWalk BrwWalk;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *brw_version(void);

// Message of the last failed call on this thread (empty after a success).
// The pointer stays valid until the next call on this thread.
const char *brw_last_error_message(void);

// `E[e^{c 𝓜(1)}]` for the Brownian meander, in closed form.
double brw_meander_laplace(double c);

// Built-in law by name (`gaussian_dyadic`, `two_config`, `point_mass`) or
// a law TOML file path.
//
// # Safety
// `name` must be a valid NUL-terminated string and `out` writable.
enum BrwStatus brw_law_new(const char *name, struct BrwLaw **out);

// # Safety
// `law` must come from [`brw_law_new`] and not be used afterwards. Null is ignored.
void brw_law_free(struct BrwLaw *law);

// `Ψ(β)`.
//
// # Safety
// `law` must be a live handle and `out` writable.
enum BrwStatus brw_law_log_laplace(const struct BrwLaw *law, double beta, double *out);

// `σ² = Ψ''(1)`.
//
// # Safety
// `law` must be a live handle and `out` writable.
enum BrwStatus brw_law_sigma_sq(const struct BrwLaw *law, double *out);

// The associated random walk of `law`.
//
// # Safety
// `law` must be a live handle and `out` writable.
enum BrwStatus brw_walk_new(const struct BrwLaw *law, struct BrwWalk **out);

// # Safety
// `walk` must come from [`brw_walk_new`] and not be used afterwards. Null is ignored.
void brw_walk_free(struct BrwWalk *walk);

// Monte Carlo `P(min_{k≤n} S_k ≥ −u)` with its standard error.
//
// # Safety
// `walk` must be a live handle; `value` and `se` writable.
enum BrwStatus brw_walk_survival(const struct BrwWalk *walk,
                                 double u,
                                 size_t n,
                                 size_t n_paths,
                                 uint64_t seed,
                                 double *value,
                                 double *se);

// Grow one tree to generation `n`. `lower_l` is the barrier `−L`; pass NaN
// for none.
//
// # Safety
// `law` must be a live handle and `out` writable.
enum BrwStatus brw_population_simulate(const struct BrwLaw *law,
                                       size_t n,
                                       double lower_l,
                                       size_t max_particles,
                                       uint64_t seed,
                                       struct BrwPopulation **out);

// Load a tree snapshot written by the CLI or [`brw_population_save`].
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` writable.
enum BrwStatus brw_population_load(const char *path, struct BrwPopulation **out);

// # Safety
// `pop` must be a live handle and `path` a valid NUL-terminated string.
enum BrwStatus brw_population_save(const struct BrwPopulation *pop, const char *path);

// # Safety
// `pop` must come from this library and not be used afterwards. Null is ignored.
void brw_population_free(struct BrwPopulation *pop);

// Last generation index and its particle count.
//
// # Safety
// `pop` must be a live handle; `generation` and `size` writable.
enum BrwStatus brw_population_shape(const struct BrwPopulation *pop,
                                    size_t *generation,
                                    size_t *size);

// Copy up to `len` last-generation positions into `buf`; `written` receives
// the number copied.
//
// # Safety
// `pop` must be a live handle, `buf` valid for `len` writes, `written` writable.
enum BrwStatus brw_population_positions(const struct BrwPopulation *pop,
                                        double *buf,
                                        size_t len,
                                        size_t *written);

// `log W_{n,β}` and the derivative martingale `D_n` of the last generation.
//
// # Safety
// `pop` must be a live handle; `log_w` and `d` writable.
enum BrwStatus brw_population_readout(const struct BrwPopulation *pop,
                                      double beta,
                                      double *log_w,
                                      double *d);

// `μ_{n,β}(F)` on an `m`-point grid with scaling `σ√n`. A finite
// `psi_prime` applies the drift adjustment; pass NaN for none.
//
// # Safety
// `pop` must be a live handle and `out` writable.
enum BrwStatus brw_gibbs_trajectory_mean(const struct BrwPopulation *pop,
                                         double beta,
                                         enum BrwFunctional functional,
                                         size_t m,
                                         double sigma,
                                         double psi_prime,
                                         double *out);

// Exact `ω_{n,β}([ε, 1])`.
//
// # Safety
// `pop` must be a live handle and `out` writable.
enum BrwStatus brw_gibbs_overlap_mass(const struct BrwPopulation *pop,
                                      double beta,
                                      double eps,
                                      double *out);

// Gibbs mass of `[lo, hi]` (infinite bounds allowed).
//
// # Safety
// `pop` must be a live handle and `out` writable.
enum BrwStatus brw_gibbs_mass_in_window(const struct BrwPopulation *pop,
                                        double beta,
                                        double lo,
                                        double hi,
                                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BRWLAB_H */
