#include <stdio.h>
#include "rigreg.h"

int main(void) {
    RigregInstance *inst = NULL;
    if (rigreg_instance_generate(2, 10, 3, 0, 0.0, 7, &inst) != RIGREG_STATUS_OK) return 1;
    double rho = 0.0;
    if (rigreg_clean_rho_bound(inst, &rho) != RIGREG_STATUS_OK) return 2;
    RigregResult *res = NULL;
    if (rigreg_solve(inst, RIGREG_VARIANT_NONCONVEX, rho, 5000, 0.0, &res) != RIGREG_STATUS_OK) return 3;
    size_t iters = 0;
    RigregTermination term;
    double obj = 1.0;
    if (rigreg_result_summary(res, &iters, &term, &obj) != RIGREG_STATUS_OK) return 4;
    if (term != RIGREG_TERMINATION_CONVERGED || obj > 1e-6) return 5;
    double small[4];
    if (rigreg_result_matrix(res, RIGREG_MATRIX_G, small, 4) != RIGREG_STATUS_BUFFER_TOO_SMALL) return 6;
    printf("%zu %.3e\n", iters, obj);
    rigreg_result_free(res);
    rigreg_instance_free(inst);
    return 0;
}
