#ifndef SEPM_H
#define SEPM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SepmStatus {
  SEPM_STATUS_OK = 0,
  SEPM_STATUS_NULL_POINTER = 1,
  SEPM_STATUS_INVALID_ARGUMENT = 2,
  SEPM_STATUS_SCENARIO = 3,
  SEPM_STATUS_PROFILE = 4,
  SEPM_STATUS_MAGNETICS = 5,
  SEPM_STATUS_VALVE = 6,
  SEPM_STATUS_PNEUMATICS = 7,
  SEPM_STATUS_ROUTING = 8,
  SEPM_STATUS_SEQUENCER = 9,
  SEPM_STATUS_REGISTRY = 10,
  SEPM_STATUS_CALIBRATION = 11,
  SEPM_STATUS_IO = 12,
  SEPM_STATUS_PANIC = 99,
} SepmStatus;

/**
 * Opaque parameter profile.
 */
typedef struct SepmProfile SepmProfile;

/**
 * Opaque routing topology.
 */
typedef struct SepmTopology SepmTopology;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *sepm_last_error(void);

/**
 * The bundled calibrated profile.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SepmStatus sepm_profile_default(struct SepmProfile **out);

/**
 * Load a profile from a bundled name or a TOML file path.
 *
 * # Safety
 * `reference` must be a NUL-terminated string; `out` a valid pointer.
 */
enum SepmStatus sepm_profile_load(const char *reference, struct SepmProfile **out);

/**
 * # Safety
 * `profile` must come from this library and not be freed twice; null is ignored.
 */
void sepm_profile_free(struct SepmProfile *profile);

/**
 * Energy of one drive pulse into the profile's coil (J).
 *
 * # Safety
 * `profile` must be a live handle; `energy` a valid pointer.
 */
enum SepmStatus sepm_pulse_energy(const struct SepmProfile *profile,
                                  double voltage,
                                  double duration,
                                  double *energy);

/**
 * Operating point of the magnetic circuit at coil current `current` (A) with
 * the switchable magnet on branch `polarity` (1 or -1).
 *
 * # Safety
 * `profile` must be a live handle; out-pointers valid.
 */
enum SepmStatus sepm_solve_flux(const struct SepmProfile *profile,
                                double current,
                                int8_t polarity,
                                double *h_m,
                                double *b_g);

/**
 * Attractive force across the working gap (N) at the given operating point.
 *
 * # Safety
 * `profile` must be a live handle; `force` a valid pointer.
 */
enum SepmStatus sepm_gap_force(const struct SepmProfile *profile,
                               double current,
                               double h_m,
                               double *force);

/**
 * Build a topology from a spec string: `binary`, `tree:K`, `six-port`,
 * `dual-tree`, `mix-decoder[:K]`.
 *
 * # Safety
 * `spec` must be a NUL-terminated string; `out` a valid pointer.
 */
enum SepmStatus sepm_topology_build(const char *spec, struct SepmTopology **out);

/**
 * # Safety
 * `topology` must come from this library and not be freed twice; null is ignored.
 */
void sepm_topology_free(struct SepmTopology *topology);

/**
 * # Safety
 * `topology` must be a live handle; `count` a valid pointer.
 */
enum SepmStatus sepm_topology_valve_count(const struct SepmTopology *topology, size_t *count);

/**
 * Valve states selecting output `address` of a decoder; writes `len` entries.
 *
 * # Safety
 * `topology` must be a live handle; `states` must hold `len` entries.
 */
enum SepmStatus sepm_decode_address(const struct SepmTopology *topology,
                                    uint32_t address,
                                    int8_t *states,
                                    size_t len);

/**
 * Number of connected input-output pairs under `states`; don't-care entries
 * must not change the outcome.
 *
 * # Safety
 * `topology` must be a live handle; `states` must hold `len` entries.
 */
enum SepmStatus sepm_route_count(const struct SepmTopology *topology,
                                 const int8_t *states,
                                 size_t len,
                                 size_t *pairs);

/**
 * Whether any input reaches output port `output` under `states`.
 *
 * # Safety
 * `topology` must be a live handle; `states` must hold `len` entries;
 * `output` must be a NUL-terminated string.
 */
enum SepmStatus sepm_output_reachable(const struct SepmTopology *topology,
                                      const int8_t *states,
                                      size_t len,
                                      const char *output,
                                      bool *reachable);

/**
 * Run a scenario (file path or bundled name). With a non-null `out_dir` the
 * trace, report, schedule and registry are written there.
 *
 * # Safety
 * `scenario` must be a NUL-terminated string; `out_dir` null or
 * NUL-terminated; out-pointers valid.
 */
enum SepmStatus sepm_run_scenario(const char *scenario,
                                  const char *out_dir,
                                  uint64_t seed,
                                  uint64_t *pulses,
                                  double *energy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEPM_H */
