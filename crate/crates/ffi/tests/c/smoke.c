#include <math.h>
#include <stdio.h>
#include <string.h>

#include "styleshift.h"

int main(void) {
    const char *cands[] = {"the cat sat on the mat"};
    const char *refs[] = {"the cat sat on the mat"};
    double score = 0.0;
    if (ss_bleu(cands, refs, 1, &score) != SS_STATUS_OK || fabs(score - 100.0) > 1e-9) {
        fprintf(stderr, "bleu: %f %s\n", score, ss_last_error());
        return 1;
    }
    double f1 = 0.0;
    if (ss_rouge("a b c", "a c d", SS_ROUGE_VARIANT_L, &f1) != SS_STATUS_OK || fabs(f1 - 2.0 / 3.0) > 1e-12) {
        fprintf(stderr, "rouge: %f\n", f1);
        return 1;
    }
    SsModel *model = NULL;
    if (ss_model_open(NULL, NULL, &model) != SS_STATUS_NULL_POINTER || model != NULL) {
        return 1;
    }
    if (strstr(ss_last_error(), "run_dir") == NULL) {
        return 1;
    }
    ss_model_free(NULL);
    puts("ok");
    return 0;
}
