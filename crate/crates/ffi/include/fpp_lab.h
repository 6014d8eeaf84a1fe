#ifndef FPP_LAB_H
#define FPP_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum FppStatus {
  FPP_STATUS_OK = 0,
  FPP_STATUS_NULL_POINTER = 1,
  FPP_STATUS_INVALID_ARGUMENT = 2,
  FPP_STATUS_OUT_OF_RANGE = 3,
  FPP_STATUS_PANIC = 4,
} FppStatus;

/**
 * One seeded realisation of the edge weights on a box.
 */
typedef struct FppEnvironment FppEnvironment;

/**
 * A weight law together with its quantile coupling.
 */
typedef struct FppLaw FppLaw;

/**
 * Reusable Dijkstra workspace for one box radius.
 */
typedef struct FppSolver FppSolver;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fpp_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated to
 * `len` bytes, always NUL-terminated when `len > 0`) and returns the size
 * needed for the full message including its NUL.
 */
size_t fpp_last_error_message(char *buf, size_t len);

/**
 * Parses `exp:1`, `uniform:1,3`, `gamma:2,1`, `lognormal:0,0.5` or `gaussian`.
 */
enum FppStatus fpp_law_parse(const char *spec, struct FppLaw **out);

enum FppStatus fpp_law_exponential(double rate, struct FppLaw **out);

enum FppStatus fpp_law_uniform(double lo, double hi, struct FppLaw **out);

enum FppStatus fpp_law_gamma(double shape, double scale, struct FppLaw **out);

enum FppStatus fpp_law_lognormal(double mu, double sigma, struct FppLaw **out);

/**
 * Releases a law; null is a no-op. Environments built from it stay valid.
 */
void fpp_law_free(struct FppLaw *law);

/**
 * G⁻¹(u) for u ∈ (0, 1).
 */
enum FppStatus fpp_law_quantile(const struct FppLaw *law, double u, double *out);

/**
 * h(x) = G⁻¹(Φ(x)).
 */
enum FppStatus fpp_coupling_h(const struct FppLaw *law, double x, double *out);

/**
 * g_τ(s) = h(h⁻¹(s) + τ).
 */
enum FppStatus fpp_coupling_g_tau(const struct FppLaw *law, double s, double tau, double *out);

/**
 * Samples weights on [−radius, radius]² from `seed`. Latents are drawn on
 * demand, so the same seed gives the same weight on every shared edge
 * regardless of radius.
 */
enum FppStatus fpp_environment_new(const struct FppLaw *law,
                                   uint32_t radius,
                                   uint64_t seed,
                                   struct FppEnvironment **out);

void fpp_environment_free(struct FppEnvironment *env);

/**
 * Weight of the edge from (x, y) to (x+1, y) (axis 0) or (x, y+1) (axis 1).
 */
enum FppStatus fpp_environment_weight(const struct FppEnvironment *env,
                                      int32_t x,
                                      int32_t y,
                                      uint8_t axis,
                                      double *out);

enum FppStatus fpp_solver_new(uint32_t radius, struct FppSolver **out);

void fpp_solver_free(struct FppSolver *solver);

/**
 * T_r(source, target) restricted to the solver's box, under the schedule
 * τ_r for distance scale `n` (n ≥ 16). r = 0 gives the unperturbed time.
 * `out_edges` may be null; otherwise it receives the geodesic length.
 */
enum FppStatus fpp_solver_passage_time(struct FppSolver *solver,
                                       const struct FppEnvironment *env,
                                       uint64_t n,
                                       double r,
                                       int32_t sx,
                                       int32_t sy,
                                       int32_t tx,
                                       int32_t ty,
                                       double *out_time,
                                       size_t *out_edges);

/**
 * max_a #{values in [a, a+w]} / len and the smallest maximising a.
 */
enum FppStatus fpp_concentration(const double *values,
                                 size_t len,
                                 double w,
                                 double *out_q_hat,
                                 double *out_a_star);

/**
 * ‖τ_r‖₂² for distance scale n.
 */
enum FppStatus fpp_tau_norm_sq(uint64_t n, double r, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FPP_LAB_H */
