/* C API for the rsseg semantic segmentation library.
 *
 * All functions return rsseg_status; on failure, rsseg_last_error() holds a
 * human-readable message (thread-local, valid until the next failing call on
 * the same thread). Handles are opaque and must be released with the matching
 * _destroy function. Strings returned through char** are heap-allocated and
 * must be released with rsseg_free().
 */
#ifndef RSSEG_H
#define RSSEG_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  RSSEG_OK = 0,
  RSSEG_ERR_USAGE = 1,   /* bad arguments / invalid configuration */
  RSSEG_ERR_DATA = 2,    /* unreadable or malformed input data */
  RSSEG_ERR_NUMERIC = 3, /* non-finite values encountered */
  RSSEG_ERR_INTERNAL = 4
} rsseg_status;

const char* rsseg_last_error(void);
const char* rsseg_version(void);
void rsseg_free(void* p);

/* Number of worker threads for the conv/filter loops; n <= 0 resets to the
 * runtime default. Results are identical for any thread count. */
void rsseg_set_threads(int n);

/* ------------------------------------------------------------------ */
/* Tensors: dense (n, c, h, w) float64 arrays, RT01 on disk.          */
/* ------------------------------------------------------------------ */

typedef struct rsseg_tensor rsseg_tensor;

rsseg_status rsseg_tensor_create(size_t n, size_t c, size_t h, size_t w,
                                 const double* data /* NULL = zeros */,
                                 rsseg_tensor** out);
rsseg_status rsseg_tensor_load(const char* path, rsseg_tensor** out);
rsseg_status rsseg_tensor_save(const rsseg_tensor* t, const char* path);
void rsseg_tensor_shape(const rsseg_tensor* t, size_t shape[4]);
const double* rsseg_tensor_data(const rsseg_tensor* t);
void rsseg_tensor_destroy(rsseg_tensor* t);

/* ------------------------------------------------------------------ */
/* Networks                                                            */
/* ------------------------------------------------------------------ */

typedef struct rsseg_network rsseg_network;

rsseg_status rsseg_network_load(const char* checkpoint_dir, rsseg_network** out);
/* Tiled prediction over an arbitrarily sized (1, C, H, W) image; emits the
 * (1, K, H, W) probability map. patch must equal 2 * core. */
rsseg_status rsseg_network_predict(rsseg_network* net, const rsseg_tensor* image,
                                   size_t patch, size_t core, rsseg_tensor** probs);
void rsseg_network_destroy(rsseg_network* net);

/* ------------------------------------------------------------------ */
/* Pipeline entry points (the CLI subcommands)                         */
/* ------------------------------------------------------------------ */

typedef struct {
  const char* manifest;      /* tab-separated: image, ndsm or "-", label, split */
  const char* spec_config;   /* NULL = built-in default network */
  const char* train_config;  /* NULL = defaults */
  const char* out_dir;
  size_t patch_size;
  size_t patch_stride;
  int use_ndsm; /* nonzero = stack the ndsm channel when present */
} rsseg_train_options;
rsseg_status rsseg_train(const rsseg_train_options* opts);

typedef struct {
  const char* checkpoint_dir;
  const char* image;
  const char* ndsm; /* NULL = none */
  const char* out_dir;
  size_t patch;
  size_t core;
} rsseg_predict_options;
rsseg_status rsseg_predict(const rsseg_predict_options* opts);

typedef struct {
  const char* prob;  /* RT01 probability map */
  const char* image; /* source image for the appearance kernel */
  const char* out_dir;
  double w1, w2;
  double sigma_alpha, sigma_beta, sigma_gamma;
  int iterations;
  int brute_force; /* nonzero = exact O(N^2) filtering */
} rsseg_refine_options;
rsseg_status rsseg_refine(const rsseg_refine_options* opts);

typedef struct {
  const char* const* ref_paths;  /* label PNGs */
  const char* const* pred_paths; /* label PNGs, same order */
  size_t count;
  const char* out_dir; /* NULL = no files written */
  size_t erode_radius;
  int ignore_class; /* -1 = none */
} rsseg_evaluate_options;
/* report: formatted per-class precision/recall/F1 table, free with rsseg_free. */
rsseg_status rsseg_evaluate(const rsseg_evaluate_options* opts, char** report);

typedef struct {
  const char* out_dir;
  uint64_t seed;
} rsseg_demo_options;
typedef struct {
  double train_acc;
  double raw_oa;
  double refined_oa;
} rsseg_demo_result;
rsseg_status rsseg_demo(const rsseg_demo_options* opts, rsseg_demo_result* result,
                        char** report);

#ifdef __cplusplus
}
#endif

#endif /* RSSEG_H */
