#ifndef QHEAD_H
#define QHEAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QhStatus {
  QH_STATUS_OK = 0,
  QH_STATUS_NULL_POINTER = 1,
  QH_STATUS_CONFIG = 2,
  QH_STATUS_DEGENERATE_INPUT = 3,
  QH_STATUS_FORMAT = 4,
  QH_STATUS_DATA = 5,
  QH_STATUS_UNSUPPORTED_MODE = 6,
  QH_STATUS_IO = 7,
  QH_STATUS_PANIC = 8,
} QhStatus;

/**
 * Opaque hybrid classification head.
 */
typedef struct QhHead QhHead;

/**
 * Opaque statevector.
 */
typedef struct QhState QhState;

/**
 * Noise applied to the measured PQC output. `shots == 0` means infinite.
 */
typedef struct QhNoise {
  double p1q;
  double p2q;
  uint64_t shots;
} QhNoise;

typedef struct QhEnergyConstants {
  double p_qpu;
  double t_1q;
  double t_2q;
  double shots;
  double p_gpu;
  double f_gpu;
} QhEnergyConstants;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *qh_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qh_version(void);

/**
 * `|0...0>` on `qubits` qubits.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum QhStatus qh_state_new(uint32_t qubits, struct QhState **out);

/**
 * Amplitude-encodes `x[0..len]` (zero-padded) on `qubits` qubits.
 *
 * # Safety
 * `x` must point to `len` doubles and `out` to storage for one handle.
 */
enum QhStatus qh_state_amplitude_encode(const double *x,
                                        size_t len,
                                        uint32_t qubits,
                                        struct QhState **out);

/**
 * # Safety
 * `state` must be null or a handle from this library not yet freed.
 */
void qh_state_free(struct QhState *state);

/**
 * # Safety
 * `state` must be a live handle.
 */
enum QhStatus qh_state_apply_ry(struct QhState *state, uint32_t qubit, double theta);

/**
 * # Safety
 * `state` must be a live handle.
 */
enum QhStatus qh_state_apply_cnot(struct QhState *state, uint32_t control, uint32_t target);

/**
 * `pauli`: 1 = X, 2 = Y, 3 = Z.
 *
 * # Safety
 * `state` must be a live handle.
 */
enum QhStatus qh_state_apply_pauli(struct QhState *state, uint32_t qubit, uint32_t pauli);

/**
 * # Safety
 * `state` must be a live handle and `out` writable.
 */
enum QhStatus qh_state_z_expectation(const struct QhState *state, uint32_t qubit, double *out);

/**
 * # Safety
 * `state` must be a live handle and `out` writable.
 */
enum QhStatus qh_state_norm(const struct QhState *state, double *out);

/**
 * Single quantum encoder head with the default ansatz on `qubits` qubits,
 * two classes.
 *
 * # Safety
 * `out` must be writable.
 */
enum QhStatus qh_head_new(size_t input_dim, uint32_t qubits, uint64_t seed, struct QhHead **out);

/**
 * Head described by flat `key = value` config text.
 *
 * # Safety
 * `config` must be a NUL-terminated string and `out` writable.
 */
enum QhStatus qh_head_from_config(const char *config, size_t input_dim, struct QhHead **out);

/**
 * # Safety
 * `head` must be null or a handle from this library not yet freed.
 */
void qh_head_free(struct QhHead *head);

/**
 * # Safety
 * `head` must be a live handle and `out` writable.
 */
enum QhStatus qh_head_num_params(const struct QhHead *head, size_t *out);

/**
 * Copies the flat parameter vector into `buf[0..len]`; `len` must equal
 * the parameter count.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum QhStatus qh_head_get_params(const struct QhHead *head, double *buf, size_t len);

/**
 * # Safety
 * `buf` must point to `len` doubles.
 */
enum QhStatus qh_head_set_params(struct QhHead *head, const double *buf, size_t len);

/**
 * Logits for one sample. `noise` may be null for the noiseless head.
 * Noise draws are determined by `sample_seed`.
 *
 * # Safety
 * `x` must hold `len` doubles and `logits` `num_logits` writable doubles.
 */
enum QhStatus qh_head_forward(const struct QhHead *head,
                              const double *x,
                              size_t len,
                              const struct QhNoise *noise,
                              uint64_t sample_seed,
                              double *logits,
                              size_t num_logits);

/**
 * Mean cross-entropy and its gradient over `n` samples stored row-major in
 * `xs` (`n * dim` doubles). Sample `i` uses seed `seed + i`.
 *
 * # Safety
 * Buffers must hold the stated number of elements; `grad` must hold the
 * parameter count.
 */
enum QhStatus qh_head_loss_and_gradient(struct QhHead *head,
                                        const double *xs,
                                        size_t n,
                                        size_t dim,
                                        const uint32_t *labels,
                                        const struct QhNoise *noise,
                                        uint64_t seed,
                                        double *loss,
                                        double *grad,
                                        size_t grad_len);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string.
 */
enum QhStatus qh_head_save(const struct QhHead *head, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string.
 */
enum QhStatus qh_head_load(struct QhHead *head, const char *path);

struct QhEnergyConstants qh_energy_default_constants(void);

/**
 * QPU and GPU energy (kJ) of the default ansatz on `qubits` qubits.
 * `consts` may be null for the defaults.
 *
 * # Safety
 * `qpu_kj` and `gpu_kj` must be writable.
 */
enum QhStatus qh_energy_estimate(uint32_t qubits,
                                 const struct QhEnergyConstants *consts,
                                 double *qpu_kj,
                                 double *gpu_kj);

/**
 * Smallest qubit count in 2..=60 where GPU energy reaches QPU energy;
 * writes 0 if there is none.
 *
 * # Safety
 * `out` must be writable.
 */
enum QhStatus qh_energy_crossover(const struct QhEnergyConstants *consts, uint32_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QHEAD_H */
