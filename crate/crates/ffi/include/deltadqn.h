#ifndef DELTADQN_H
#define DELTADQN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DDQN_OK 0

#define DDQN_ERR_NULL_POINTER 1

#define DDQN_ERR_INVALID_ARGUMENT 2

#define DDQN_ERR_SHAPE 3

#define DDQN_ERR_IO 4

#define DDQN_ERR_CHECKPOINT 5

#define DDQN_ERR_BUFFER_TOO_SMALL 6

#define DDQN_ERR_PANIC 7

/**
 * Event-driven inference state for one input stream.
 */
typedef struct DdqnDeltaEngine DdqnDeltaEngine;

/**
 * A network description together with its weights.
 */
typedef struct DdqnNetwork DdqnNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ddqn_last_error(void);

/**
 * Cumulative pruned fraction after `iteration` rounds at `rate`.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
int32_t ddqn_schedule_fraction(double rate, uint32_t iteration, double *out);

/**
 * Builds the reference 84x84x4 DQN with seeded uniform initial weights.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
int32_t ddqn_network_reference(size_t n_output, uint64_t seed, DdqnNetwork **out);

/**
 * Loads a checkpoint file. Pruned weights are already zero in it.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid handle slot.
 */
int32_t ddqn_network_load(const char *path, DdqnNetwork **out);

/**
 * # Safety
 * `net` must be null or a handle from this library, not yet freed.
 */
void ddqn_network_free(DdqnNetwork *net);

/**
 * Number of input values, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t ddqn_network_input_len(const DdqnNetwork *net);

/**
 * Number of outputs, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t ddqn_network_output_len(const DdqnNetwork *net);

/**
 * Unoptimised multiplication counts. Writes one entry per report row
 * (weighted layers plus a zero flatten row) into `rows` and the row count
 * into `n_rows`. With `rows` null only the counts are returned.
 *
 * # Safety
 * `net` must be a live handle; `rows` must hold `capacity` values if
 * non-null; `n_rows` and `total` must be valid or null.
 */
int32_t ddqn_network_static_count(const DdqnNetwork *net,
                                  uint64_t *rows,
                                  size_t capacity,
                                  size_t *n_rows,
                                  uint64_t *total);

/**
 * Dense forward pass.
 *
 * # Safety
 * `net` must be a live handle, `input` must hold `input_len` values and
 * `output` `output_len` values.
 */
int32_t ddqn_network_forward(const DdqnNetwork *net,
                             const double *input,
                             size_t input_len,
                             double *output,
                             size_t output_len);

/**
 * Creates a delta engine with one threshold for the input and every layer.
 *
 * # Safety
 * `net` must be a live handle and `out` a valid handle slot. The engine
 * copies what it needs, so `net` may be freed afterwards.
 */
int32_t ddqn_delta_new(const DdqnNetwork *net, double threshold, DdqnDeltaEngine **out);

/**
 * Feeds one frame and writes the transmitted output values.
 *
 * # Safety
 * As for [`ddqn_network_forward`], with a live engine handle.
 */
int32_t ddqn_delta_step(DdqnDeltaEngine *engine,
                        const double *input,
                        size_t input_len,
                        double *output,
                        size_t output_len);

/**
 * Returns the engine to its initial state and clears its counters.
 *
 * # Safety
 * `engine` must be a live handle.
 */
int32_t ddqn_delta_reset(DdqnDeltaEngine *engine);

/**
 * Timesteps processed and significant multiplications so far.
 *
 * # Safety
 * `engine` must be a live handle; the out pointers must be valid or null.
 */
int32_t ddqn_delta_counters(const DdqnDeltaEngine *engine,
                            uint64_t *timesteps,
                            uint64_t *multiplications);

/**
 * Significant multiplications per weighted layer.
 *
 * # Safety
 * `engine` must be a live handle, `out` must hold `capacity` values and
 * `n_layers` must be valid or null.
 */
int32_t ddqn_delta_layer_multiplications(const DdqnDeltaEngine *engine,
                                         uint64_t *out,
                                         size_t capacity,
                                         size_t *n_layers);

/**
 * # Safety
 * `engine` must be null or a live handle.
 */
void ddqn_delta_free(DdqnDeltaEngine *engine);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DELTADQN_H */
