#include <math.h>
#include <stdio.h>
#include <string.h>

#include "taskmerge.h"

#define CHECK(cond)                                                    \
    do {                                                               \
        if (!(cond)) {                                                 \
            fprintf(stderr, "check failed at line %d: %s\n", __LINE__, \
                    #cond);                                            \
            return 1;                                                  \
        }                                                              \
    } while (0)

int main(void) {
    TmWorkloadParams params = tm_workload_params_default();
    params.task_count = 120;
    params.seed = 4;

    TmTrace *trace = NULL;
    CHECK(tm_trace_generate(&params, &trace) == TM_STATUS_OK);
    CHECK(tm_trace_len(trace) == 120);

    TmSimConfig config = tm_sim_config_default();
    config.policy = TM_POLICY_EDF;
    TmRunMetrics on, off;
    CHECK(tm_simulate(trace, &config, &on) == TM_STATUS_OK);
    config.merge_enabled = false;
    CHECK(tm_simulate(trace, &config, &off) == TM_STATUS_OK);
    CHECK(on.requests == 120 && off.requests == 120);
    CHECK(off.merges_task + off.merges_operation + off.merges_data == 0);
    CHECK(on.units_executed + on.merges_task + on.merges_operation + on.merges_data == 120);

    config.policy = 9;
    CHECK(tm_simulate(trace, &config, &on) == TM_STATUS_INVALID_ARGUMENT);
    CHECK(strstr(tm_last_error_message(), "policy") != NULL);

    double mean, sd;
    CHECK(tm_merged_exec_estimate(10, 1, 8, 0.5, TM_MERGE_OPERATION, 0.5, 0.9, &mean, &sd) ==
          TM_STATUS_OK);
    CHECK(fabs(mean - 14.0) < 1e-12);
    CHECK(fabs(sd - sqrt(1.0625)) < 1e-12);

    tm_trace_free(trace);
    printf("ok %s\n", tm_version());
    return 0;
}
