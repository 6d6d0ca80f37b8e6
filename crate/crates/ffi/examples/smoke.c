#include <stdio.h>
#include "branchpde.h"

int main(void) {
    BpdeRun *run = NULL;
    const char *cfg = "{\"n\":2000,\"tau\":0.01,\"t_end\":0.05,\"modes\":4,\"grid\":16}";
    if (bpde_run(BPDE_RUN_KIND_SCALAR, "heat", cfg, 1, &run) != BPDE_STATUS_OK) {
        fprintf(stderr, "run failed: %s\n", bpde_last_error());
        return 1;
    }
    size_t rows = bpde_run_series_len(run);
    BpdeSeriesRow row;
    bpde_run_series_row(run, rows - 1, &row);
    printf("branchpde %s: t=%g count=%llu mass=%.6f\n", bpde_version(), row.t,
           (unsigned long long)row.count_u, row.mass_u);
    bpde_run_free(run);
    return 0;
}
