#include <math.h>
#include <stdio.h>
#include <string.h>

#include "cloneforge.h"

#define N 40
#define LEN (3 * 32 * 32)

static float pixels[N * LEN];

static int check(CfStatus s, const char *what) {
    if (s != CF_STATUS_OK) {
        fprintf(stderr, "%s failed (%d): %s\n", what, (int)s, cf_last_error());
        return 1;
    }
    return 0;
}

int main(void) {
    unsigned state = 12345u;
    for (size_t i = 0; i < N * LEN; i++) {
        state = state * 1103515245u + 12345u;
        pixels[i] = (float)((state >> 8) & 0xffff) / 65535.0f;
    }

    CfCorpus *corpus = NULL;
    if (check(cf_corpus_from_pixels(pixels, N, &corpus), "from_pixels")) return 1;
    size_t len = 0;
    if (check(cf_corpus_len(corpus, &len), "len") || len != N) return 1;

    CfTrainOptions opt = cf_train_options_default();
    opt.n_pos = 16;
    opt.n_unl = 16;
    opt.batch_pos = 8;
    opt.batch_unl = 8;
    opt.epochs = 2;
    opt.seed = 3;
    CfModel *model = NULL;
    if (check(cf_model_train(corpus, 0, &opt, &model), "train")) return 1;

    float mu, m, tau;
    if (check(cf_model_threshold(model, &mu, &m, &tau), "threshold")) return 1;
    if (fabsf(mu + m - tau) > 1e-5f) return 1;

    CfCandidate top[5];
    size_t written = 0;
    if (check(cf_model_top_k(model, corpus, 5, top, 5, &written), "top_k") || written != 5) return 1;
    for (size_t i = 1; i < written; i++) {
        if (top[i].score > top[i - 1].score) return 1;
    }

    if (cf_corpus_len(NULL, &len) != CF_STATUS_NULL_POINTER) return 1;
    if (strlen(cf_last_error()) == 0) return 1;
    if (cf_model_train(corpus, N, &opt, &model) != CF_STATUS_OUT_OF_RANGE) return 1;

    printf("cloneforge %s tau=%.4f top=%llu\n", cf_version(), tau, (unsigned long long)top[0].index);
    cf_model_free(model);
    cf_corpus_free(corpus);
    return 0;
}
