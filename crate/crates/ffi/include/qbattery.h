#ifndef QBATTERY_H
#define QBATTERY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QbStatus {
  QB_STATUS_OK = 0,
  QB_STATUS_NULL_POINTER = 1,
  // Invalid parameter or configuration.
  QB_STATUS_INVALID_ARGUMENT = 2,
  // Integration failure, undefined metric, spectral pole.
  QB_STATUS_NUMERIC = 3,
  QB_STATUS_DATA = 4,
  QB_STATUS_UNKNOWN_PARAMETER = 5,
  QB_STATUS_PANIC = 6,
} QbStatus;

typedef enum QbRegime {
  QB_REGIME_DECAY_DOMINATED = 0,
  QB_REGIME_CROSSOVER = 1,
  QB_REGIME_COUPLING_DOMINATED = 2,
  QB_REGIME_NON_RESONANT = 3,
} QbRegime;

// Model, pump and solver settings.
typedef struct QbModel QbModel;

// Energy trace on a uniform grid.
typedef struct QbTrace QbTrace;

// Charging metrics: times in ps, energy in meV, power in meV/ps.
typedef struct QbMetrics {
  double rise_time;
  double peak_energy;
  double peak_power;
  double t_peak;
  double t_half;
} QbMetrics;

// Regime and its boundary molecule counts; rates in meV.
typedef struct QbRegimeReport {
  enum QbRegime regime;
  double effective_coupling;
  double cavity_decay;
  double dephasing;
  double n_kappa;
  double n_gammaz;
  double n_sigma;
} QbRegimeReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *qb_last_error_message(void);

// Library version as a static string.
const char *qb_version(void);

// Best-fit model with photon ratio 0.14; free with `qb_model_free`.
struct QbModel *qb_model_new_default(void);

// # Safety
// `model` must come from `qb_model_new_default` and not be freed twice.
void qb_model_free(struct QbModel *model);

// Set a named parameter. Names and units:
// `n_molecules`, `coupling_nev`, `cavity_lifetime_fs`, `dephasing_mev`,
// `dephasing_ref_count`, `scale_dephasing` (0 or 1), `relaxation_mev`,
// `detuning_cavity_mev`, `detuning_molecule_mev`, `transition_energy_mev`,
// `amplitude`, `photon_ratio` (sets the amplitude to `√(rN)` for the
// current `N`), `pulse_center_fs`, `pulse_width_fs`, `response_fs`,
// `t_start_ps`, `t_end_ps`, `output_dt_ps`, `rel_tol`, `abs_tol`.
//
// # Safety
// `model` must be a live handle and `name` a NUL-terminated string.
enum QbStatus qb_model_set_param(struct QbModel *model, const char *name, double value);

// Read a named parameter (same names and units as `qb_model_set_param`).
//
// # Safety
// `model` must be a live handle, `name` NUL-terminated and `out` writable.
enum QbStatus qb_model_get_param(const struct QbModel *model, const char *name, double *out);

// Integrate the moment equations from the ground state. On success `*out`
// holds a new trace (unconvolved) to be freed with `qb_trace_free`.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum QbStatus qb_simulate(const struct QbModel *model, struct QbTrace **out);

// Gaussian response convolution of a trace into a new trace.
//
// # Safety
// `trace` must be a live handle and `out` writable.
enum QbStatus qb_trace_convolve(const struct QbTrace *trace, double sigma_ps, struct QbTrace **out);

// # Safety
// `trace` must come from this library and not be freed twice.
void qb_trace_free(struct QbTrace *trace);

// Number of samples, 0 for a null handle.
//
// # Safety
// `trace` must be null or a live handle.
size_t qb_trace_len(const struct QbTrace *trace);

// Sample times (ps); valid while the trace lives.
//
// # Safety
// `trace` must be null or a live handle.
const double *qb_trace_times(const struct QbTrace *trace);

// Energy per molecule (meV); valid while the trace lives.
//
// # Safety
// `trace` must be null or a live handle.
const double *qb_trace_energy(const struct QbTrace *trace);

// Rise time, peak energy and peak power relative to arrival `t_p` (ps).
//
// # Safety
// `trace` must be a live handle and `out` writable.
enum QbStatus qb_trace_metrics(const struct QbTrace *trace, double t_p, struct QbMetrics *out);

// Absorption at `n` detunings (meV) into `out[0..n]`.
//
// # Safety
// `detunings` must hold `n` readable and `out` `n` writable doubles.
enum QbStatus qb_spectrum(const struct QbModel *model,
                          const double *detunings,
                          size_t n,
                          double *out);

// Operating regime at photon ratio `r`, using the model's pulse width.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum QbStatus qb_classify_regime(const struct QbModel *model, double r, struct QbRegimeReport *out);

// Exponent `f` with `q_i/q_j = (N_i/N_j)^f`.
//
// # Safety
// `out` must be writable.
enum QbStatus qb_scaling_exponent(double q_i, double q_j, double n_i, double n_j, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QBATTERY_H */
