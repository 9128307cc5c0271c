/* Minimal C consumer of the branchkit C ABI: traces the fold calibration
 * system toward decreasing lambda and prints the branch.
 *
 * Build (after `cargo build -p branchkit-capi --release`, from the repo
 * root; link the static archive explicitly so the .so is not picked up):
 *   cc crates/capi/examples/trace_fold.c -Icrates/capi/include \
 *      target/release/libbranchkit_capi.a -lm -lpthread -ldl -o trace_fold
 */
#include <stdio.h>

#include "branchkit.h"

int main(void) {
    BkProblem *problem = NULL;
    BkStatus status = bk_problem_builtin("fold", &problem);
    if (status != BkStatus_Ok) {
        fprintf(stderr, "problem: %s\n", bk_last_error_message());
        return 1;
    }

    BkTraceOptions opts;
    bk_trace_options_default(&opts);

    BkBranch *branch = NULL;
    status = bk_trace(problem, -1, &opts, &branch);
    if (status != BkStatus_Ok) {
        fprintf(stderr, "trace: %s\n", bk_last_error_message());
        bk_problem_free(problem);
        return 1;
    }

    size_t len = bk_branch_len(branch);
    printf("points: %zu, classification: %d\n", len,
           (int)bk_branch_classification(branch));
    for (size_t i = 0; i < len; i += len / 8 + 1) {
        double lambda, u;
        if (bk_branch_point(branch, i, &lambda, &u, 1) == BkStatus_Ok) {
            printf("  %3zu: lambda = %+.6f  u = %+.6f\n", i, lambda, u);
        }
    }

    int64_t sum;
    int32_t balanced;
    if (bk_branch_balance(branch, &sum, &balanced) == BkStatus_Ok) {
        printf("base-slice index sum: %lld (balanced: %s)\n", (long long)sum,
               balanced ? "yes" : "no");
    }

    bk_branch_free(branch);
    bk_problem_free(problem);
    return 0;
}
