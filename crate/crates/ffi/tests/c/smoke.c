#include <math.h>
#include <stdio.h>
#include <string.h>

#include "gridrisk.h"

static const char *K3 =
    "{\"name\":\"k3\",\"buses\":[{\"id\":\"1\"},{\"id\":\"2\"},{\"id\":\"3\"}],"
    "\"lines\":[{\"from\":\"1\",\"to\":\"2\",\"susceptance\":1,\"capacity\":5},"
    "{\"from\":\"1\",\"to\":\"3\",\"susceptance\":1,\"capacity\":5},"
    "{\"from\":\"2\",\"to\":\"3\",\"susceptance\":1,\"capacity\":5}],"
    "\"slack\":\"3\",\"injections\":{\"mu\":[0,0],\"iid_variance\":0.5},"
    "\"capacity_rule\":{\"type\":\"explicit\"},\"q\":0.001}";

int main(void) {
    GrScenario *h = NULL;
    if (gr_scenario_from_json(K3, &h) != GR_STATUS_OK) {
        fprintf(stderr, "load: %s\n", gr_last_error_message());
        return 1;
    }
    size_t n = 0, m = 0, d = 0;
    gr_scenario_dims(h, &n, &m, &d);
    GrAssessment a;
    double mu[2] = {3.5, -3.5};
    if (gr_assess(h, mu, 2, 0.0, &a) != GR_STATUS_OK) return 1;
    printf("%zu %zu %zu %.5f %.5f %d %d\n", n, m, d, a.r_up, a.r_star, a.in_up, a.in_star);
    double small[1];
    int status = gr_scenario_sigma(h, small, 1);
    printf("%d %s\n", status, gr_last_error_message());
    gr_scenario_free(h);
    return strcmp(gr_version(), "") == 0;
}
