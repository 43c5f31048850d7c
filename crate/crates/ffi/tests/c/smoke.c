#include <stdio.h>
#include "sepm.h"

int main(void) {
    SepmProfile *p = NULL;
    if (sepm_profile_default(&p) != SEPM_STATUS_OK) return 1;
    double e = 0.0;
    if (sepm_pulse_energy(p, 48.0, 1e-3, &e) != SEPM_STATUS_OK) return 2;
    sepm_profile_free(p);

    SepmTopology *t = NULL;
    if (sepm_topology_build("tree:3", &t) != SEPM_STATUS_OK) return 3;
    size_t n = 0;
    sepm_topology_valve_count(t, &n);
    int8_t states[7];
    if (sepm_decode_address(t, 5, states, n) != SEPM_STATUS_OK) return 4;
    bool hit = false;
    sepm_output_reachable(t, states, n, "Y5", &hit);
    if (sepm_topology_build("tree:0", &t) != SEPM_STATUS_ROUTING) return 5;
    sepm_topology_free(t);
    printf("%.4f %zu %d %s\n", e, n, hit, sepm_last_error());
    return 0;
}
