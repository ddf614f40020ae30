#include <math.h>
#include <stdio.h>
#include "sto_hopfield.h"

int main(void) {
    double ic = 0.0;
    if (sto_critical_current(NULL, &ic) != STO_STATUS_OK) return 1;

    double phases[2 * 4] = {0.0, 0.5, 1.0, 1.5, 0.0, 2.0, -1.0, 3.0};
    StoWeights *w = NULL;
    if (sto_weights_train(phases, 2, 4, &w) != STO_STATUS_OK) return 2;
    double e = 0.0;
    if (sto_energy(w, phases, 4, &e) != STO_STATUS_OK) return 3;

    StoStatus s = sto_weights_get(w, 9, 9, &e, &e);
    const char *msg = sto_last_error();
    if (s != STO_STATUS_INVALID_ARGUMENT || msg == NULL) return 4;
    sto_weights_free(w);

    printf("%.6e %s\n", ic, sto_version());
    return 0;
}
