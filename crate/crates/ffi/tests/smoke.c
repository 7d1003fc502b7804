#include <math.h>
#include <stdio.h>
#include "persona_eval.h"

#define CHECK(cond)                                              \
    do {                                                         \
        if (!(cond)) {                                           \
            fprintf(stderr, "check failed: %s (%s)\n", #cond,    \
                    pe_last_error());                            \
            return 1;                                            \
        }                                                        \
    } while (0)

int main(void) {
    double lo, hi;
    CHECK(pe_wald_ci(0.4, 0.10, 5, &lo, &hi) == PE_STATUS_OK);
    CHECK(lo < 0.5 && hi > 0.5);

    PeEstimateStatus st;
    int8_t label;
    CHECK(pe_classify_estimate(0.2, 0.10, 5, &st, &label) == PE_STATUS_OK);
    CHECK(st == PE_ESTIMATE_STATUS_CONFIDENT && label == 0);

    int8_t a[] = {0, 1, 0, 1};
    int8_t b[] = {1, 0, 1, 0};
    double r;
    size_t n;
    CHECK(pe_binary_correlation(a, b, 4, &r, &n) == PE_STATUS_OK);
    CHECK(fabs(r + 1.0) < 1e-12 && n == 4);

    PeLabelMatrix *m = NULL;
    CHECK(pe_label_matrix_new(2, &m) == PE_STATUS_OK);
    PeCorrelationMatrix *cm = NULL;
    CHECK(pe_correlation_matrix_build(m, 0, &cm) == PE_STATUS_OK);
    double clc;
    CHECK(pe_clc(cm, 0, &clc) == PE_STATUS_UNDEFINED);
    pe_correlation_matrix_free(cm);
    pe_label_matrix_free(m);

    char *norm = NULL;
    CHECK(pe_normalize_mentions("@someone hello", &norm) == PE_STATUS_OK);
    printf("%s | %s\n", pe_version(), norm);
    pe_string_free(norm);
    return 0;
}
