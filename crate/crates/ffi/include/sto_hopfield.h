#ifndef STO_HOPFIELD_H
#define STO_HOPFIELD_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum StoStatus {
  STO_STATUS_OK = 0,
  STO_STATUS_NULL_POINTER = 1,
  STO_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The stored patterns are linearly dependent.
   */
  STO_STATUS_DEGENERATE_PATTERNS = 3,
  /**
   * Bias below the oscillation threshold or target frequency out of reach.
   */
  STO_STATUS_OUT_OF_RANGE = 4,
  /**
   * Physical preparation ended with unlocked oscillators.
   */
  STO_STATUS_LOCK_FAILED = 5,
  STO_STATUS_IO = 6,
  /**
   * Malformed weight file or configuration text.
   */
  STO_STATUS_FORMAT = 7,
  STO_STATUS_PANIC = 8,
} StoStatus;

/**
 * Opaque network: configuration, oscillator constants and current state.
 */
typedef struct StoNetwork StoNetwork;

/**
 * Opaque trained weight matrix.
 */
typedef struct StoWeights StoWeights;

/**
 * Oscillator material and geometry constants (SI units).
 */
typedef struct StoParams {
  double g;
  double d0;
  double d1;
  double k_ms0;
  double k_ms1;
  double k_oe0;
  double k_oe1;
  double a_j;
  double b_j;
  double r0;
} StoParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a success.
 * Valid until the next call into the library on this thread.
 */
const char *sto_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *sto_version(void);

/**
 * Fills `out` with the reference oscillator constants.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum StoStatus sto_params_default(struct StoParams *out);

/**
 * Steady radius and angular frequency (rad/s) at DC bias `current` (A).
 * `params` may be null for the reference constants.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum StoStatus sto_steady_state(const struct StoParams *params,
                                double current,
                                double *rho0,
                                double *omega);

/**
 * Oscillation threshold current (A).
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum StoStatus sto_critical_current(const struct StoParams *params, double *current);

/**
 * DC bias (A) whose steady frequency is `f_target` (Hz).
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum StoStatus sto_calibrate_bias(const struct StoParams *params, double f_target, double *bias);

/**
 * Pseudo-inverse weights for `k` patterns of `n` phases each (row-major
 * `k x n` array, radians).
 *
 * # Safety
 * `phases` must hold `k * n` values; `weights` must be valid for writes.
 */
enum StoStatus sto_weights_train(const double *phases,
                                 size_t k,
                                 size_t n,
                                 struct StoWeights **weights);

/**
 * Builds weights from a row-major `n x n` array of interleaved
 * (re, im) pairs; the diagonal is zeroed.
 *
 * # Safety
 * `values` must hold `2 n n` doubles; `weights` must be valid for writes.
 */
enum StoStatus sto_weights_from_values(const double *values, size_t n, struct StoWeights **weights);

/**
 * Releases a weight handle; null is ignored.
 *
 * # Safety
 * `weights` must be null or a handle not yet freed.
 */
void sto_weights_free(struct StoWeights *weights);

/**
 * Matrix dimension.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum StoStatus sto_weights_n(const struct StoWeights *weights, size_t *n);

/**
 * Entry `(i, j)`.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum StoStatus sto_weights_get(const struct StoWeights *weights,
                               size_t i,
                               size_t j,
                               double *re,
                               double *im);

/**
 * Largest `|w_ij - conj(w_ji)|`.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum StoStatus sto_weights_hermitian_defect(const struct StoWeights *weights, double *defect);

/**
 * Writes the binary weight file, optionally tagged with the hash of the
 * `k x n` training patterns (`phases` may be null when `k` is 0).
 *
 * # Safety
 * Pointers must be null or valid; `path` nul-terminated.
 */
enum StoStatus sto_weights_save(const struct StoWeights *weights,
                                const char *path,
                                const double *phases,
                                size_t k);

/**
 * Reads a binary weight file.
 *
 * # Safety
 * Pointers must be null or valid; `path` nul-terminated.
 */
enum StoStatus sto_weights_load(const char *path, struct StoWeights **weights);

/**
 * Feedback currents `kappa Im(sum_j w_ij exp(i theta_j))` (A) for `n` phases.
 *
 * # Safety
 * `theta` and `currents` must hold `n` values.
 */
enum StoStatus sto_feedback(const struct StoWeights *weights,
                            const double *theta,
                            size_t n,
                            double kappa,
                            double *currents);

/**
 * Hopfield energy of unit phasors at `phases`.
 *
 * # Safety
 * `phases` must hold `n` values; `energy` valid for writes.
 */
enum StoStatus sto_energy(const struct StoWeights *weights,
                          const double *phases,
                          size_t n,
                          double *energy);

/**
 * One contrastive-divergence update from `k` ideal and `k` relaxed phase
 * patterns (`k x n`, row-major); returns a new handle.
 *
 * # Safety
 * Arrays must hold `k * n` values; `updated` valid for writes.
 */
enum StoStatus sto_cd_update(const struct StoWeights *weights,
                             const double *ideal,
                             const double *relaxed,
                             size_t k,
                             double eta,
                             struct StoWeights **updated);

/**
 * RMS phase error minimized over a global phase, and the minimizing phase.
 *
 * # Safety
 * `retrieved` and `stored` must hold `n` values; outputs valid for writes.
 */
enum StoStatus sto_error_metric(const double *retrieved,
                                const double *stored,
                                size_t n,
                                double *delta,
                                double *phi);

/**
 * Creates a network from a JSON configuration (null for defaults) and
 * oscillator constants (null for the reference set).
 *
 * # Safety
 * `config_json` null or nul-terminated; `network` valid for writes.
 */
enum StoStatus sto_network_new(const char *config_json,
                               const struct StoParams *params,
                               struct StoNetwork **network);

/**
 * Releases a network handle; null is ignored.
 *
 * # Safety
 * `network` must be null or a handle not yet freed.
 */
void sto_network_free(struct StoNetwork *network);

/**
 * Number of oscillators.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum StoStatus sto_network_n(const struct StoNetwork *network, size_t *n);

/**
 * Preparation stage toward `query` phases.
 *
 * # Safety
 * `query` must hold `n` values.
 */
enum StoStatus sto_network_prepare(struct StoNetwork *network, const double *query, size_t n);

/**
 * Recognition stage on `weights`. `target` (may be null) gives the stored
 * phases for the error; `delta` then receives the final RMS error (NaN
 * without a target). `final_phases` (may be null) receives the extracted
 * phases.
 *
 * # Safety
 * Non-null arrays must hold `n` values.
 */
enum StoStatus sto_network_recognize(struct StoNetwork *network,
                                     const struct StoWeights *weights,
                                     const double *target,
                                     size_t n,
                                     double *final_phases,
                                     double *delta);

/**
 * Current phases relative to the reference rotation.
 *
 * # Safety
 * `phases` must hold `n` values.
 */
enum StoStatus sto_network_phases(const struct StoNetwork *network, double *phases, size_t n);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STO_HOPFIELD_H */
