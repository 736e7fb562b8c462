#include <stdio.h>
#include <string.h>

#include "edgemesh.h"

#define CHECK(cond)                                              \
    do {                                                         \
        if (!(cond)) {                                           \
            fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #cond); \
            return 1;                                            \
        }                                                        \
    } while (0)

int main(void) {
    EmBattery *b = NULL;
    CHECK(em_battery_new(10.0, 10.0, 2.0, 1.0, &b) == EM_STATUS_OK);
    uint8_t active = 0;
    CHECK(em_battery_step(b, 0.0, 2, 1, &active) == EM_STATUS_OK);
    double charge = -1.0;
    CHECK(em_battery_charge(b, &charge) == EM_STATUS_OK);
    CHECK(active == 1 && charge == 5.0);
    CHECK(em_battery_step(b, 0.0, 1, 2, NULL) == EM_STATUS_INVALID_ARGUMENT);
    char *msg = em_last_error_message();
    CHECK(msg != NULL && strstr(msg, "exceeds") != NULL);
    em_string_free(msg);
    em_battery_free(b);

    char *scenario = em_case_study_json();
    EmSimResult *r = NULL;
    CHECK(em_sim_run_json(scenario, 0, 0, &r) == EM_STATUS_OK);
    em_string_free(scenario);
    uint64_t objective = 0;
    CHECK(em_sim_objective(r, &objective) == EM_STATUS_OK && objective > 0);
    em_sim_free(r);

    printf("ok %s %llu\n", em_version(), (unsigned long long)objective);
    return 0;
}
