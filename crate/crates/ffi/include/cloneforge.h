#ifndef CLONEFORGE_H
#define CLONEFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CfStatus {
  CF_STATUS_OK = 0,
  CF_STATUS_NULL_POINTER = 1,
  CF_STATUS_INVALID_ARGUMENT = 2,
  CF_STATUS_OUT_OF_RANGE = 3,
  CF_STATUS_IO = 4,
  CF_STATUS_FORMAT = 5,
  CF_STATUS_NON_FINITE = 6,
  CF_STATUS_BUFFER_TOO_SMALL = 7,
  CF_STATUS_PANIC = 8,
} CfStatus;

/**
 * A loaded image corpus.
 */
typedef struct CfCorpus CfCorpus;

/**
 * A model trained for one anchor.
 */
typedef struct CfModel CfModel;

/**
 * Training knobs exposed over the C ABI. Obtain defaults from
 * [`cf_train_options_default`] and override fields as needed.
 */
typedef struct CfTrainOptions {
  uint64_t seed;
  uint32_t epochs;
  uint32_t embed_dim;
  /**
   * NaN selects the learned margin.
   */
  float fixed_margin;
  float lambda_var;
  float weight_decay;
  uint32_t n_pos;
  uint32_t n_unl;
  uint32_t batch_pos;
  uint32_t batch_unl;
} CfTrainOptions;

typedef struct CfCandidate {
  uint64_t index;
  float score;
  bool is_clone;
} CfCandidate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cf_version(void);

/**
 * Message for the last failed call on this thread. Valid until the next
 * failing call on the same thread; empty if nothing has failed.
 */
const char *cf_last_error(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CfStatus cf_corpus_load_store(const char *path, struct CfCorpus **out);

/**
 * Loads every decodable image in a directory, resized to 32×32.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CfStatus cf_corpus_load_dir(const char *dir, struct CfCorpus **out);

/**
 * # Safety
 * `paths` must point to `n_paths` NUL-terminated strings.
 */
enum CfStatus cf_corpus_load_cifar(const char *const *paths, size_t n_paths, struct CfCorpus **out);

/**
 * Builds a corpus from `n_images` CHW float images in `[0, 1]`, each
 * `3·32·32` values. Image ids are their decimal indices.
 *
 * # Safety
 * `pixels` must point to `n_images · 3072` floats.
 */
enum CfStatus cf_corpus_from_pixels(const float *pixels, size_t n_images, struct CfCorpus **out);

/**
 * # Safety
 * `corpus` must be a live handle and `len` a valid pointer.
 */
enum CfStatus cf_corpus_len(const struct CfCorpus *corpus, size_t *len);

/**
 * Writes the 64-hex-digit corpus checksum plus a NUL into `buf`.
 *
 * # Safety
 * `buf` must hold `cap` bytes.
 */
enum CfStatus cf_corpus_checksum(const struct CfCorpus *corpus, char *buf, size_t cap);

/**
 * # Safety
 * `corpus` must be null or a handle not yet freed.
 */
void cf_corpus_free(struct CfCorpus *corpus);

struct CfTrainOptions cf_train_options_default(void);

/**
 * Trains a model for corpus image `anchor`. `options` may be null for the
 * defaults.
 *
 * # Safety
 * `corpus` must be a live handle; `options` null or valid; `out` valid.
 */
enum CfStatus cf_model_train(const struct CfCorpus *corpus,
                             size_t anchor,
                             const struct CfTrainOptions *options,
                             struct CfModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CfStatus cf_model_load(const char *path, size_t anchor, struct CfModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum CfStatus cf_model_save(const struct CfModel *model, const char *path);

/**
 * Mean positive norm, margin and threshold `τ = μ + m`. Any output pointer
 * may be null.
 *
 * # Safety
 * `model` must be a live handle.
 */
enum CfStatus cf_model_threshold(const struct CfModel *model, float *mu, float *m, float *tau);

/**
 * Writes `−‖f(x)‖₂` for every corpus image into `scores`, which must hold
 * the corpus length.
 *
 * # Safety
 * `scores` must hold `cap` floats.
 */
enum CfStatus cf_model_score(const struct CfModel *model,
                             const struct CfCorpus *corpus,
                             float *scores,
                             size_t cap);

/**
 * The `k` most similar corpus images, best first, ties to the lower index.
 * Writes `min(k, corpus length)` entries and stores that count in `written`.
 *
 * # Safety
 * `out` must hold `cap` entries; `written` must be valid.
 */
enum CfStatus cf_model_top_k(const struct CfModel *model,
                             const struct CfCorpus *corpus,
                             size_t k,
                             struct CfCandidate *out,
                             size_t cap,
                             size_t *written);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void cf_model_free(struct CfModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLONEFORGE_H */
