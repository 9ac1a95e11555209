#ifndef KZCOARSE_H
#define KZCOARSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KzcStatus {
  KZC_STATUS_OK = 0,
  KZC_STATUS_NULL_POINTER = 1,
  KZC_STATUS_INVALID_ARGUMENT = 2,
  // The computation itself failed.
  KZC_STATUS_ENGINE = 3,
  KZC_STATUS_BUFFER_TOO_SMALL = 4,
  KZC_STATUS_PANIC = 5,
} KzcStatus;

// A periodic 2D Ising lattice under heat-bath dynamics.
typedef struct KzcIsingLattice KzcIsingLattice;

// Scaling functions of one universality class.
typedef struct KzcScalingModel KzcScalingModel;

// Result of a linear or power-law ramp of the transverse-field chain.
typedef struct KzcTfimRamp KzcTfimRamp;

typedef struct KzcKzScales {
  double t_kz;
  double xi_kz;
  double g_kz;
} KzcKzScales;

typedef struct KzcIsingObservables {
  double magnetization;
  double energy_per_site;
  // Inverse density of unsatisfied bonds.
  double defect_length;
} KzcIsingObservables;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message of this thread into `buf` (NUL-terminated).
//
// Returns the message length excluding the terminator, or 0 when there is
// none. If `len` is too small the message is truncated.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t kzc_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *kzc_version(void);

// Model for a built-in class name such as `"ising-2+1d"`.
//
// # Safety
// `class_name` must be a NUL-terminated string; `out` must be writable.
enum KzcStatus kzc_scaling_model_new(const char *class_name, struct KzcScalingModel **out);

// Set the scaled onset `x_c` of classical critical coarsening.
//
// # Safety
// `model` must come from [`kzc_scaling_model_new`].
enum KzcStatus kzc_scaling_model_set_x_c(struct KzcScalingModel *model, double x_c);

// # Safety
// `model` must be null or come from [`kzc_scaling_model_new`], freed once.
void kzc_scaling_model_free(struct KzcScalingModel *model);

// Late-time growth exponent of the length during a sweep of power `p`.
//
// # Safety
// `model` must be valid; `out` must be writable.
enum KzcStatus kzc_growth_exponent(const struct KzcScalingModel *model, double p, double *out);

// Freeze-out scales of a ramp `g = sign(t)|t/tau|^p` in microscopic units.
//
// # Safety
// `model` must be valid; `out` must be writable.
enum KzcStatus kzc_kz_scales(const struct KzcScalingModel *model,
                             double tau,
                             double p,
                             struct KzcKzScales *out);

// `f_p(x)`, the length during a continuing sweep.
//
// # Safety
// `model` must be valid; `out` must be writable.
enum KzcStatus kzc_eval_sweep(const struct KzcScalingModel *model, double x, double p, double *out);

// `F(x, x_s)`, the length after a stop at scaled time `x_s`.
//
// # Safety
// `model` must be valid; `out` must be writable.
enum KzcStatus kzc_eval_stopped(const struct KzcScalingModel *model,
                                double x,
                                double x_s,
                                double *out);

// Lattice of `lx * ly` independent random spins.
//
// # Safety
// `out` must be writable.
enum KzcStatus kzc_ising_new(size_t lx, size_t ly, uint64_t seed, struct KzcIsingLattice **out);

// # Safety
// `lat` must be null or come from [`kzc_ising_new`], freed once.
void kzc_ising_free(struct KzcIsingLattice *lat);

// `sweeps` full sweeps at fixed temperature (in units of J).
//
// # Safety
// `lat` must be valid.
enum KzcStatus kzc_ising_sweep(struct KzcIsingLattice *lat, double temperature, uint64_t sweeps);

// # Safety
// `lat` must be valid; `out` must be writable.
enum KzcStatus kzc_ising_observables(const struct KzcIsingLattice *lat,
                                     struct KzcIsingObservables *out);

// Copy the spins (row-major, +1/-1) into `buf`, which must hold `lx * ly`.
//
// # Safety
// `lat` must be valid; `buf` must point to `len` writable bytes.
enum KzcStatus kzc_ising_spins(const struct KzcIsingLattice *lat, int8_t *buf, size_t len);

// Ramp an `l`-site chain through the critical point with default endpoints.
//
// # Safety
// `out` must be writable.
enum KzcStatus kzc_tfim_ramp(size_t l, double tau, double p, struct KzcTfimRamp **out);

// # Safety
// `ramp` must be null or come from [`kzc_tfim_ramp`], freed once.
void kzc_tfim_ramp_free(struct KzcTfimRamp *ramp);

// Kink density per site.
//
// # Safety
// `ramp` must be valid; `out` must be writable.
enum KzcStatus kzc_tfim_ramp_density(const struct KzcTfimRamp *ramp, double *out);

// Number of positive momenta in the ramp.
//
// # Safety
// `ramp` must be null or valid.
size_t kzc_tfim_ramp_modes(const struct KzcTfimRamp *ramp);

// Copy the momenta and excitation probabilities into two buffers of `len`.
//
// # Safety
// `ramp` must be valid; `k` and `p_k` must each point to `len` writable doubles.
enum KzcStatus kzc_tfim_ramp_modes_copy(const struct KzcTfimRamp *ramp,
                                        double *k,
                                        double *p_k,
                                        size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KZCOARSE_H */
