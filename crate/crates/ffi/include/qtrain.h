#ifndef QTRAIN_H
#define QTRAIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QtStatus {
  QT_STATUS_OK = 0,
  QT_STATUS_INVALID_ARGUMENT = 1,
  QT_STATUS_SHAPE_MISMATCH = 2,
  QT_STATUS_TOO_MANY_QUBITS = 3,
  QT_STATUS_NON_FINITE_LOSS = 4,
  QT_STATUS_PARSE = 5,
  QT_STATUS_CONFIG = 6,
  QT_STATUS_IO = 7,
  QT_STATUS_JSON = 8,
  QT_STATUS_NULL_POINTER = 9,
  QT_STATUS_PANIC = 10,
} QtStatus;

/**
 * Circuit + mapping model generating `m` parameters.
 */
typedef struct QtGenerator QtGenerator;

typedef struct QtChunkPlan {
  size_t m;
  size_t chunk_size;
  size_t num_chunks;
  size_t num_qubits;
  size_t tail_len;
} QtChunkPlan;

typedef struct QtGeneratorSizes {
  struct QtChunkPlan plan;
  size_t circuit_params;
  size_t mapping_params;
} QtGeneratorSizes;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on this thread.
 */
const char *qt_last_error(void);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum QtStatus qt_plan_chunks(size_t m, size_t chunk_size, struct QtChunkPlan *out);

/**
 * Plan for generating the `r * (d + k)` factors of a `d x k` LoRA update.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum QtStatus qt_plan_lora(size_t d,
                           size_t k,
                           size_t r,
                           size_t chunk_size,
                           struct QtChunkPlan *out);

/**
 * Great-circle distance in km between two (lat, lon) points in degrees.
 */
double qt_great_circle(double lat1, double lon1, double lat2, double lon2, double radius_km);

/**
 * Measurement probabilities of the layered RY/CNOT circuit. `theta` is
 * `layers x qubits` row-major; `out` must hold `2^qubits` values.
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
enum QtStatus qt_circuit_probabilities(size_t num_qubits,
                                       size_t num_layers,
                                       const double *theta,
                                       size_t theta_len,
                                       double *out,
                                       size_t out_len);

/**
 * New generator for `m` parameters with random angles and mapping weights.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum QtStatus qt_generator_new(size_t m,
                               size_t chunk_size,
                               size_t num_layers,
                               uint64_t seed,
                               struct QtGenerator **out);

/**
 * # Safety
 * `gen` must come from [`qt_generator_new`] and not be used afterwards.
 */
void qt_generator_free(struct QtGenerator *gen);

/**
 * # Safety
 * `gen` must be a live handle and `out` valid for writes.
 */
enum QtStatus qt_generator_sizes(struct QtGenerator *gen, struct QtGeneratorSizes *out);

/**
 * Copy the circuit angles into `out` (length = circuit parameter count).
 *
 * # Safety
 * `gen` must be a live handle; `out` valid for `len` writes.
 */
enum QtStatus qt_generator_get_theta(struct QtGenerator *gen, double *out, size_t len);

/**
 * # Safety
 * `gen` must be a live handle; `theta` valid for `len` reads.
 */
enum QtStatus qt_generator_set_theta(struct QtGenerator *gen, const double *theta, size_t len);

/**
 * Generate the `m` target parameters into `out`.
 *
 * # Safety
 * `gen` must be a live handle; `out` valid for `len` writes.
 */
enum QtStatus qt_generator_generate(struct QtGenerator *gen, double *out, size_t len);

/**
 * Pull `dL/da` back to the circuit angles and mapping weights.
 * `method` is 0 for the exact adjoint, 1 for parameter shift.
 *
 * # Safety
 * `gen` must be a live handle; all buffers valid for their lengths.
 */
enum QtStatus qt_generator_backprop(struct QtGenerator *gen,
                                    const double *grad_a,
                                    size_t grad_a_len,
                                    uint32_t method,
                                    double *grad_theta,
                                    size_t grad_theta_len,
                                    double *grad_b,
                                    size_t grad_b_len);

/**
 * Train from a JSON config on `data` (CSV path or `synth:SEED:COUNT[:STEPS]`).
 * On success `*report_json` receives the run report; release it with
 * [`qt_string_free`].
 *
 * # Safety
 * Strings must be NUL-terminated; `report_json` valid for writes.
 */
enum QtStatus qt_train_json(const char *config_json, const char *data, char **report_json);

/**
 * # Safety
 * `s` must come from this library, or be NULL.
 */
void qt_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QTRAIN_H */
