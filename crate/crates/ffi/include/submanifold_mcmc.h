#ifndef SUBMANIFOLD_MCMC_H
#define SUBMANIFOLD_MCMC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SmcStatus {
  SMC_STATUS_OK = 0,
  SMC_STATUS_NULL_POINTER = 1,
  SMC_STATUS_INVALID_CONFIG = 2,
  SMC_STATUS_CHAIN_ABORT = 3,
  SMC_STATUS_NUMERIC = 4,
  SMC_STATUS_IO = 5,
  SMC_STATUS_INVALID_ARGUMENT = 6,
  SMC_STATUS_PANIC = 7,
} SmcStatus;

/**
 * One chain of a configuration, advanced on demand.
 */
typedef struct SmcChain SmcChain;

/**
 * A validated run configuration.
 */
typedef struct SmcConfig SmcConfig;

/**
 * Summary rates of a chain. Undefined ratios are NaN.
 */
typedef struct SmcSummary {
  uint64_t n_total;
  double fsr;
  double bsr;
  double tar;
  double mean_jump;
  double large_jump_rate;
  double ctf;
} SmcSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *smc_last_error_message(void);

/**
 * Parses and validates a JSON run configuration.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum SmcStatus smc_config_from_json(const char *json, struct SmcConfig **out);

/**
 * Releases a configuration. Null is ignored.
 *
 * # Safety
 * `cfg` must come from [`smc_config_from_json`] and not be used afterwards.
 */
void smc_config_free(struct SmcConfig *cfg);

/**
 * Ambient dimension of the configured problem, 0 for a null handle.
 *
 * # Safety
 * `cfg` must be null or a live handle.
 */
size_t smc_config_dim(const struct SmcConfig *cfg);

/**
 * The configuration with all defaults filled in, as JSON. Release the
 * string with [`smc_string_free`].
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum SmcStatus smc_config_to_json(const struct SmcConfig *cfg, char **out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void smc_string_free(char *s);

/**
 * Runs every chain of the configuration and writes the output files.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum SmcStatus smc_config_execute(const struct SmcConfig *cfg);

/**
 * Creates chain number `chain` of a configuration at its initial state.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum SmcStatus smc_chain_new(const struct SmcConfig *cfg, uint64_t chain, struct SmcChain **out);

/**
 * Releases a chain. Null is ignored.
 *
 * # Safety
 * `chain` must come from [`smc_chain_new`] and not be used afterwards.
 */
void smc_chain_free(struct SmcChain *chain);

/**
 * Advances the chain by `n` iterations.
 *
 * # Safety
 * `chain` must be a live handle.
 */
enum SmcStatus smc_chain_step(struct SmcChain *chain, uint64_t n);

/**
 * Number of iterations performed so far, 0 for a null handle.
 *
 * # Safety
 * `chain` must be null or a live handle.
 */
uint64_t smc_chain_iterations(const struct SmcChain *chain);

/**
 * Copies the current position into `out`, which must hold `len` values
 * with `len` equal to the problem dimension.
 *
 * # Safety
 * `chain` must be a live handle and `out` must point to `len` writable doubles.
 */
enum SmcStatus smc_chain_position(const struct SmcChain *chain, double *out, size_t len);

/**
 * Summary rates of the iterations performed so far.
 *
 * # Safety
 * `chain` must be a live handle and `out` a valid pointer.
 */
enum SmcStatus smc_chain_summary(const struct SmcChain *chain, struct SmcSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUBMANIFOLD_MCMC_H */
