#ifndef TAUPRIOR_H
#define TAUPRIOR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TpStatus {
  TP_STATUS_OK = 0,
  TP_STATUS_NULL_POINTER = 1,
  TP_STATUS_INVALID_UTF8 = 2,
  TP_STATUS_DOMAIN = 3,
  TP_STATUS_STATE = 4,
  TP_STATUS_CONFIG = 5,
  TP_STATUS_FIT_DEGENERATE = 6,
  TP_STATUS_UNSUPPORTED_DEFAULT = 7,
  TP_STATUS_PARSE = 8,
  TP_STATUS_NOT_FOUND = 9,
  TP_STATUS_IO = 10,
  TP_STATUS_JSON = 11,
  TP_STATUS_PANIC = 12,
} TpStatus;

typedef enum TpStage {
  TP_STAGE_STAGE1 = 1,
  TP_STAGE_STAGE2 = 2,
  TP_STAGE_STAGE3 = 3,
  TP_STAGE_FINALIZED = 4,
} TpStage;

/**
 * Opaque elicitation session.
 */
typedef struct TpSession TpSession;

/**
 * Probabilities of the four heterogeneity bands on the log-OR scale.
 */
typedef struct TpBands {
  double p_low;
  double p_moderate;
  double p_high;
  double p_extreme;
} TpBands;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *tp_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void tp_string_free(char *s);

/**
 * `tau = ln(R) / 3.92` for a ratio `R >= 1`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum TpStatus tp_ratio_to_tau(double r, double *out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum TpStatus tp_tau_to_ratio(double tau, double *out);

/**
 * Converts a log-OR scale `tau` to the named outcome scale. Pass NaN for
 * `sigma` unless the scale is a mean difference.
 *
 * # Safety
 * `scale` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TpStatus tp_convert_scale(double tau_or, const char *scale, double sigma, double *out);

/**
 * Fits a ratio distribution to a chip allocation in the chip file format
 * (`lower,upper,nbins[,total_chips],bin1,...`, the budget column only when
 * a header row names it); writes the fit as JSON.
 *
 * # Safety
 * `chips_csv` must be a NUL-terminated string and `out_json` a valid pointer.
 */
enum TpStatus tp_fit_ratio(const char *chips_csv, char **out_json);

/**
 * Exact band probabilities of a heterogeneity prior given as JSON.
 *
 * # Safety
 * `prior_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TpStatus tp_prior_bands(const char *prior_json, struct TpBands *out);

/**
 * Starts a session at stage 1. Pass NaN for `sigma` unless needed.
 *
 * # Safety
 * `scale` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TpStatus tp_session_new(const char *scale, double sigma, struct TpSession **out);

/**
 * # Safety
 * `session` must come from [`tp_session_new`] and not be used afterwards.
 */
void tp_session_free(struct TpSession *session);

/**
 * Applies one judgement, e.g. `{"judgment":"max_ratio","r_max":10}`. The
 * session is left unchanged on failure.
 *
 * # Safety
 * `session` must be a live handle and `judgment_json` a NUL-terminated string.
 */
enum TpStatus tp_session_apply(struct TpSession *session, const char *judgment_json);

/**
 * # Safety
 * `session` must be a live handle and `out` a valid pointer.
 */
enum TpStatus tp_session_stage(const struct TpSession *session, enum TpStage *out);

/**
 * Full session state as JSON.
 *
 * # Safety
 * `session` must be a live handle and `out_json` a valid pointer.
 */
enum TpStatus tp_session_to_json(const struct TpSession *session, char **out_json);

/**
 * The prior the session currently implies as JSON, `null` when none.
 *
 * # Safety
 * `session` must be a live handle and `out_json` a valid pointer.
 */
enum TpStatus tp_session_prior(const struct TpSession *session, char **out_json);

/**
 * Monte Carlo band probabilities of the session's current prior from
 * `draws` samples (at least 10000) on stream `seed`.
 *
 * # Safety
 * `session` must be a live handle and `out` a valid pointer.
 */
enum TpStatus tp_session_bands(const struct TpSession *session,
                               uint64_t seed,
                               size_t draws,
                               struct TpBands *out);

/**
 * Runs an analysis described by an analysis configuration in JSON and
 * writes the report bundle as JSON. Blocks until the sampler finishes.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out_json` a valid pointer.
 */
enum TpStatus tp_analyze_json(const char *config_json, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TAUPRIOR_H */
