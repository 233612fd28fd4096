#include <stdio.h>
#include "m3cond.h"

int main(void) {
    M3Family *fam = NULL;
    M3Conditioner *c = NULL;
    double sites[2] = {-1.0, 1.0};
    double values[2] = {1.0, 1.0};
    size_t members[2] = {0, 1};
    double p = 0.0;
    double draws[5];

    if (m3_family_smith(&fam) != M3_STATUS_OK) return 1;
    if (m3_conditioner_new(fam, sites, values, 2, 0.0, &c) != M3_STATUS_OK) {
        fprintf(stderr, "%s\n", m3_last_error_message());
        return 1;
    }
    m3_conditioner_joint_probability(c, members, 2, &p);
    m3_conditioner_predictive(c, 0.0, 5, 1, draws);
    printf("m3cond %s joint %.5f first draw %.4f\n", m3_version(), p, draws[0]);
    if (m3_conditioner_new(fam, sites, sites, 2, 0.0, &c) != M3_STATUS_OK)
        printf("error: %s\n", m3_last_error_message());
    m3_conditioner_free(c);
    m3_family_free(fam);
    return 0;
}
