#ifndef BRANCHKIT_H
#define BRANCHKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
enum BkStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  BkStatus_Ok = 0,
  BkStatus_InvalidArgument = 1,
  BkStatus_DomainViolation = 2,
  BkStatus_SingularPoint = 3,
  BkStatus_NoConvergence = 4,
  BkStatus_Unsupported = 5,
  BkStatus_Internal = 6,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum BkStatus BkStatus;
#else
typedef int32_t BkStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Branch classification labels.
 */
enum BkClassification
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  BkClassification_Unbounded = 0,
  BkClassification_Boundary = 1,
  BkClassification_BaseReturn = 2,
  BkClassification_WindowExhausted = 3,
  BkClassification_Stalled = 4,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum BkClassification BkClassification;
#else
typedef int32_t BkClassification;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Opaque branch handle.
 */
typedef struct BkBranch BkBranch;

/**
 * Opaque problem handle: the system plus its start solution.
 */
typedef struct BkProblem BkProblem;

/**
 * Trace options mirrored over the C boundary. Zero-initialize and call
 * `bk_trace_options_default` to fill in the defaults.
 */
typedef struct BkTraceOptions {
  double h_init;
  double h_min;
  double h_max;
  double newton_tol;
  uintptr_t newton_max_iter;
  double grow;
  double shrink;
  uintptr_t grow_after;
  uintptr_t max_steps;
  double return_separation;
} BkTraceOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static C string.
 */
const char *bk_version(void);

/**
 * Message describing the most recent error on this thread. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *bk_last_error_message(void);

/**
 * Fills `opts` with the default trace options.
 *
 * # Safety
 * `opts` must point to writable memory for one `BkTraceOptions`.
 */
BkStatus bk_trace_options_default(struct BkTraceOptions *opts);

/**
 * Creates a built-in calibration problem by name
 * ("circle", "fold", "pitchfork", "line").
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a writable pointer slot.
 */
BkStatus bk_problem_builtin(const char *name, struct BkProblem **out);

/**
 * Creates the discretized quasilinear boundary value problem with `m`
 * interior nodes and parameters mu, q, delta. The start solution is the
 * positive state at lambda = 0.
 *
 * # Safety
 * `out` must be a writable pointer slot.
 */
BkStatus bk_problem_mcbvp(uintptr_t m, double mu, double q, double delta, struct BkProblem **out);

/**
 * Overrides the run window and blow-up cap of a problem handle.
 *
 * # Safety
 * `problem` must be a live handle from a `bk_problem_*` constructor.
 */
BkStatus bk_problem_set_window(struct BkProblem *problem,
                               double lambda_min,
                               double lambda_max,
                               double norm_cap);

/**
 * Number of state components of the problem.
 *
 * # Safety
 * `problem` must be a live handle; returns 0 on null.
 */
uintptr_t bk_problem_state_dim(const struct BkProblem *problem);

/**
 * Copies the start solution into caller-provided storage.
 *
 * # Safety
 * `u_out` must hold at least `u_len >= state_dim` doubles.
 */
BkStatus bk_problem_start(const struct BkProblem *problem,
                          double *lambda_out,
                          double *u_out,
                          uintptr_t u_len);

/**
 * Traces one unilateral branch. `side` is +1 (lambda above the base level)
 * or -1. `opts` may be null for defaults.
 *
 * # Safety
 * `problem` must be live; `out` writable; `opts` null or valid.
 */
BkStatus bk_trace(const struct BkProblem *problem,
                  int32_t side,
                  const struct BkTraceOptions *opts,
                  struct BkBranch **out);

/**
 * Number of accepted points on the branch.
 *
 * # Safety
 * `branch` must be a live handle; returns 0 on null.
 */
uintptr_t bk_branch_len(const struct BkBranch *branch);

/**
 * Classification label of the branch.
 *
 * # Safety
 * `branch` must be a live handle; null maps to `Stalled`.
 */
BkClassification bk_branch_classification(const struct BkBranch *branch);

/**
 * Copies one accepted point into caller storage.
 *
 * # Safety
 * `u_out` must hold at least `u_len >= state_dim` doubles.
 */
BkStatus bk_branch_point(const struct BkBranch *branch,
                         uintptr_t index,
                         double *lambda_out,
                         double *u_out,
                         uintptr_t u_len);

/**
 * Degree balance over the base-slice crossings collected by the trace:
 * writes the index sum and whether the balanced predicate holds.
 *
 * # Safety
 * `sum_out` and `balanced_out` must be writable.
 */
BkStatus bk_branch_balance(const struct BkBranch *branch, int64_t *sum_out, int32_t *balanced_out);

/**
 * Frees a problem handle.
 *
 * # Safety
 * `problem` must come from a `bk_problem_*` constructor; double frees are UB.
 */
void bk_problem_free(struct BkProblem *problem);

/**
 * Frees a branch handle.
 *
 * # Safety
 * `branch` must come from `bk_trace`; double frees are UB.
 */
void bk_branch_free(struct BkBranch *branch);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BRANCHKIT_H */
