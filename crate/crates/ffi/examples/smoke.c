/* Build: cc -Icrates/ffi/include crates/ffi/examples/smoke.c target/release/libequinox_ffi.a -lm -lpthread -ldl */
#include <stdio.h>
#include "equinox.h"

int main(void) {
    EqxTrace *trace = NULL;
    EqxReport *report = NULL;
    EqxSummary s;
    if (eqx_trace_generate("balanced", 30.0, 1, &trace) != EQX_STATUS_OK ||
        eqx_simulate(trace, "{\"policy\":{\"kind\":\"equinox\"}}", 1, &report) != EQX_STATUS_OK ||
        eqx_report_summary(report, &s) != EQX_STATUS_OK) {
        fprintf(stderr, "error: %s\n", eqx_last_error());
        return 1;
    }
    printf("completed=%llu throughput=%.1f jain_hf=%.4f\n",
           (unsigned long long)s.completed, s.throughput, s.jain_hf);
    eqx_report_free(report);
    eqx_trace_free(trace);
    return 0;
}
