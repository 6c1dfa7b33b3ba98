#ifndef NETFIELD_H
#define NETFIELD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NfStatus {
  NF_STATUS_OK = 0,
  NF_STATUS_NULL_POINTER = 1,
  NF_STATUS_INVALID_UTF8 = 2,
  NF_STATUS_CONFIG = 3,
  NF_STATUS_PARSE = 4,
  NF_STATUS_INVALID_ARGUMENT = 5,
  NF_STATUS_SIZE_MISMATCH = 6,
  NF_STATUS_NON_FINITE = 7,
  NF_STATUS_NON_CONVERGENCE = 8,
  NF_STATUS_CFL = 9,
  NF_STATUS_SCHEME = 10,
  NF_STATUS_UNSUPPORTED = 11,
  NF_STATUS_IO = 12,
  NF_STATUS_OUT_OF_RANGE = 13,
  NF_STATUS_PANIC = 14,
} NfStatus;

/*
 Opaque experiment configuration.
 */
typedef struct NfConfig NfConfig;

/*
 Opaque simulated particle ensemble.
 */
typedef struct NfEnsemble NfEnsemble;

/*
 Opaque result of a finished run.
 */
typedef struct NfManifest NfManifest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. Valid until the next call.
 */
const char *nf_last_error(void);

/*
 Library version as a static string.
 */
const char *nf_version(void);

/*
 # Safety
 `s` must come from this library and not have been freed.
 */
void nf_string_free(char *s);

/*
 Parse configuration text into a new handle.

 # Safety
 `text` must be a nul-terminated string; `out` must be writable.
 */
enum NfStatus nf_config_parse(const char *text, struct NfConfig **out);

/*
 Canonical text of a configuration.

 # Safety
 `config` must be a live handle; `out` must be writable.
 */
enum NfStatus nf_config_emit(const struct NfConfig *config, char **out);

/*
 Replace the output directory of a configuration.

 # Safety
 `config` must be a live handle; `dir` a nul-terminated string.
 */
enum NfStatus nf_config_set_output(struct NfConfig *config, const char *dir);

/*
 # Safety
 `config` must come from [`nf_config_parse`] and not have been freed.
 */
void nf_config_free(struct NfConfig *config);

/*
 Run the configured experiment with `threads` workers (0 uses the default).

 # Safety
 `config` must be a live handle; `out` must be writable.
 */
enum NfStatus nf_run(const struct NfConfig *config, size_t threads, struct NfManifest **out);

/*
 1 when every cell finished and every check passed, 0 otherwise.

 # Safety
 `manifest` must be a live handle.
 */
int nf_manifest_pass(const struct NfManifest *manifest);

/*
 Number of acceptance checks in a manifest.

 # Safety
 `manifest` must be a live handle.
 */
size_t nf_manifest_check_count(const struct NfManifest *manifest);

/*
 Name and verdict of check `index`.

 # Safety
 `manifest` must be a live handle; `name` and `pass` must be writable.
 */
enum NfStatus nf_manifest_check(const struct NfManifest *manifest,
                                size_t index,
                                char **name,
                                int *pass);

/*
 Manifest as JSON text.

 # Safety
 `manifest` must be a live handle; `out` must be writable.
 */
enum NfStatus nf_manifest_json(const struct NfManifest *manifest, char **out);

/*
 # Safety
 `manifest` must come from [`nf_run`] and not have been freed.
 */
void nf_manifest_free(struct NfManifest *manifest);

/*
 Simulate `n` particles of the configured model and graph with one seed.

 # Safety
 `config` must be a live handle; `out` must be writable.
 */
enum NfStatus nf_simulate(const struct NfConfig *config,
                          size_t n,
                          uint64_t seed,
                          struct NfEnsemble **out);

/*
 Particles, time steps and state dimension of an ensemble.

 # Safety
 `ensemble` must be a live handle; the out-pointers must be writable.
 */
enum NfStatus nf_ensemble_shape(const struct NfEnsemble *ensemble,
                                size_t *n,
                                size_t *steps,
                                size_t *dim);

/*
 Copy the `n × dim` states at step `k` into `buf`, which holds `len` doubles.

 # Safety
 `ensemble` must be a live handle; `buf` must hold `len` doubles.
 */
enum NfStatus nf_ensemble_states(const struct NfEnsemble *ensemble,
                                 size_t k,
                                 double *buf,
                                 size_t len);

/*
 # Safety
 `ensemble` must come from [`nf_simulate`] and not have been freed.
 */
void nf_ensemble_free(struct NfEnsemble *ensemble);

/*
 Wasserstein-1 distance between two samples on the line.

 # Safety
 `a` and `b` must hold `na` and `nb` doubles; `out` must be writable.
 */
enum NfStatus nf_w1(const double *a, size_t na, const double *b, size_t nb, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NETFIELD_H */
