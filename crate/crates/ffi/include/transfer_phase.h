#ifndef TRANSFER_PHASE_H
#define TRANSFER_PHASE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TpStatus {
  TP_STATUS_OK = 0,
  TP_STATUS_NULL_POINTER = 1,
  TP_STATUS_INVALID_ARGUMENT = 2,
  TP_STATUS_INVALID_SPEC = 3,
  TP_STATUS_NON_CONVERGENCE = 4,
  TP_STATUS_NON_FINITE = 5,
  TP_STATUS_PARSE = 6,
  TP_STATUS_IO = 7,
  TP_STATUS_PANIC = 8,
} TpStatus;

typedef enum TpActivation {
  TP_ACTIVATION_IDENTITY = 0,
  TP_ACTIVATION_RELU = 1,
  TP_ACTIVATION_SIGN = 2,
} TpActivation;

typedef enum TpLoss {
  TP_LOSS_SQUARED = 0,
  TP_LOSS_LOGISTIC = 1,
  TP_LOSS_HINGE = 2,
} TpLoss;

// Opaque solver; safe to share between threads.
typedef struct TpSolver TpSolver;

// Opaque task specification.
typedef struct TpSpec TpSpec;

typedef struct TpSaddle {
  double q;
  double r;
  // Infinite in the full-copy limit.
  double sigma;
  double objective;
  uint64_t iterations;
} TpSaddle;

typedef struct TpPrediction {
  struct TpSaddle source;
  struct TpSaddle target;
  double train_error;
  double gen_error;
} TpPrediction;

typedef struct TpMoments {
  double c;
  double v;
} TpMoments;

typedef struct TpEnvelope {
  double value;
  double prox;
  double d_da;
  double d_db;
} TpEnvelope;

// Means and standard errors over trials; a standard error is NaN when
// only one trial ran.
typedef struct TpTrialSummary {
  uint64_t n_trials;
  double q_hat_mean;
  double q_hat_se;
  double r_hat_mean;
  double r_hat_se;
  double train_error_mean;
  double train_error_se;
  double gen_error_mean;
  double gen_error_se;
} TpTrialSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *tp_version(void);

// Message from the most recent call on this thread if it failed, else
// NULL. Valid until the next call into the library from that thread.
const char *tp_last_error(void);

// # Safety
// `s` must come from this library and not have been freed.
void tp_string_free(char *s);

// Parses and validates a spec from JSON.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum TpStatus tp_spec_from_json(const char *json, struct TpSpec **out);

// Serializes a spec; release the result with `tp_string_free`.
//
// # Safety
// `spec` must be a live handle; `out` must be writable.
enum TpStatus tp_spec_to_json(const struct TpSpec *spec, char **out);

// # Safety
// `spec` must be NULL or a handle from `tp_spec_from_json`, freed once.
void tp_spec_free(struct TpSpec *spec);

// Solver with default quadrature orders and tolerances.
//
// # Safety
// `out` must be writable.
enum TpStatus tp_solver_new(struct TpSolver **out);

// # Safety
// `solver` must be NULL or a handle from `tp_solver_new`, freed once.
void tp_solver_free(struct TpSolver *solver);

// # Safety
// Handles must be live; `out` must be writable.
enum TpStatus tp_solve_source(const struct TpSolver *solver,
                              const struct TpSpec *spec,
                              struct TpSaddle *out);

// Target saddle given a source solution from `tp_solve_source`.
//
// # Safety
// Handles and `source` must be valid; `out` must be writable.
enum TpStatus tp_solve_target(const struct TpSolver *solver,
                              const struct TpSpec *spec,
                              const struct TpSaddle *source,
                              struct TpSaddle *out);

// # Safety
// Handles must be live; `out` must be writable.
enum TpStatus tp_predict(const struct TpSolver *solver,
                         const struct TpSpec *spec,
                         struct TpPrediction *out);

// Generalization error at overlaps `(q, r)`.
//
// # Safety
// `spec` must be live; `out` must be writable.
enum TpStatus tp_gen_error(const struct TpSpec *spec, double q, double r, double *out);

// Training error of a target solution.
//
// # Safety
// `spec` and `target` must be valid; `out` must be writable.
enum TpStatus tp_train_error(const struct TpSpec *spec, const struct TpSaddle *target, double *out);

// # Safety
// `out` must be writable.
enum TpStatus tp_moments(enum TpActivation phi, struct TpMoments *out);

// Critical similarity for regression with an identity predictor.
//
// # Safety
// `out` must be writable.
enum TpStatus tp_rho_c(enum TpActivation phi, double alpha_s, double alpha_t, double *out);

// Sufficient similarity threshold for sign classification.
//
// # Safety
// `out` must be writable.
enum TpStatus tp_g_threshold(double alpha_t, double alpha_s, double *out);

// Moreau envelope of `loss(y; ·)` at `a` with step `b`.
//
// # Safety
// `out` must be writable.
enum TpStatus tp_moreau(enum TpLoss loss, double y, double a, double b, struct TpEnvelope *out);

// Monte Carlo trials of the spec at dimension `p`, seeds
// `master_seed, master_seed + 1, …`.
//
// # Safety
// `spec` must be live; `out` must be writable.
enum TpStatus tp_run_trials(const struct TpSpec *spec,
                            uint64_t p,
                            uint64_t n_trials,
                            uint64_t master_seed,
                            struct TpTrialSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRANSFER_PHASE_H */
