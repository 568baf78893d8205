#include "rsseg.h"

#include <cstdlib>
#include <cstring>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "rsseg/nn.hpp"
#include "rsseg/pipeline.hpp"
#include "rsseg/tensor.hpp"

using rsseg::Error;
using rsseg::ErrorKind;
using rsseg::Tensor;

struct rsseg_tensor {
  Tensor t;
};
struct rsseg_network {
  rsseg::nn::Network net;
};

namespace {

thread_local std::string g_last_error;

rsseg_status to_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return RSSEG_ERR_USAGE;
    case ErrorKind::Data: return RSSEG_ERR_DATA;
    case ErrorKind::Numeric: return RSSEG_ERR_NUMERIC;
  }
  return RSSEG_ERR_INTERNAL;
}

template <typename Fn>
rsseg_status guarded(Fn&& fn) {
  try {
    fn();
    return RSSEG_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.kind());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return RSSEG_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return RSSEG_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p) std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

std::string opt_str(const char* s) { return s ? std::string(s) : std::string(); }

rsseg_status require(bool ok, const char* msg) {
  if (ok) return RSSEG_OK;
  g_last_error = msg;
  return RSSEG_ERR_USAGE;
}

}  // namespace

extern "C" {

const char* rsseg_last_error(void) { return g_last_error.c_str(); }

const char* rsseg_version(void) { return "1.0.0"; }

void rsseg_free(void* p) { std::free(p); }

void rsseg_set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n > 0 ? n : omp_get_num_procs());
#else
  (void)n;
#endif
}

/* ---- tensors ---- */

rsseg_status rsseg_tensor_create(size_t n, size_t c, size_t h, size_t w,
                                 const double* data, rsseg_tensor** out) {
  if (rsseg_status s = require(out != nullptr, "tensor_create: out is null")) return s;
  return guarded([&] {
    Tensor t(n, c, h, w);
    if (data) std::memcpy(t.data(), data, t.numel() * sizeof(double));
    *out = new rsseg_tensor{std::move(t)};
  });
}

rsseg_status rsseg_tensor_load(const char* path, rsseg_tensor** out) {
  if (rsseg_status s = require(path && out, "tensor_load: null argument")) return s;
  return guarded([&] { *out = new rsseg_tensor{rsseg::load_rt01(path)}; });
}

rsseg_status rsseg_tensor_save(const rsseg_tensor* t, const char* path) {
  if (rsseg_status s = require(t && path, "tensor_save: null argument")) return s;
  return guarded([&] { rsseg::save_rt01(path, t->t); });
}

void rsseg_tensor_shape(const rsseg_tensor* t, size_t shape[4]) {
  if (!t || !shape) return;
  for (int i = 0; i < 4; ++i) shape[i] = t->t.shape().e[i];
}

const double* rsseg_tensor_data(const rsseg_tensor* t) { return t ? t->t.data() : nullptr; }

void rsseg_tensor_destroy(rsseg_tensor* t) { delete t; }

/* ---- networks ---- */

rsseg_status rsseg_network_load(const char* checkpoint_dir, rsseg_network** out) {
  if (rsseg_status s = require(checkpoint_dir && out, "network_load: null argument"))
    return s;
  return guarded(
      [&] { *out = new rsseg_network{rsseg::nn::Network::load_checkpoint(checkpoint_dir)}; });
}

rsseg_status rsseg_network_predict(rsseg_network* net, const rsseg_tensor* image,
                                   size_t patch, size_t core, rsseg_tensor** probs) {
  if (rsseg_status s = require(net && image && probs, "network_predict: null argument"))
    return s;
  return guarded([&] {
    rsseg::tiling::TileScheme scheme{patch, core};
    *probs = new rsseg_tensor{
        rsseg::pipeline::predict_probmap(net->net, image->t, scheme)};
  });
}

void rsseg_network_destroy(rsseg_network* net) { delete net; }

/* ---- pipeline ---- */

rsseg_status rsseg_train(const rsseg_train_options* opts) {
  if (rsseg_status s = require(opts != nullptr, "train: opts is null")) return s;
  return guarded([&] {
    rsseg::pipeline::TrainRun run;
    run.manifest_path = opt_str(opts->manifest);
    run.spec_config_path = opt_str(opts->spec_config);
    run.train_config_path = opt_str(opts->train_config);
    run.out_dir = opt_str(opts->out_dir);
    run.patch_size = opts->patch_size;
    run.patch_stride = opts->patch_stride;
    run.use_ndsm = opts->use_ndsm != 0;
    rsseg::pipeline::run_train(run);
  });
}

rsseg_status rsseg_predict(const rsseg_predict_options* opts) {
  if (rsseg_status s = require(opts != nullptr, "predict: opts is null")) return s;
  return guarded([&] {
    rsseg::pipeline::PredictRun run;
    run.checkpoint_dir = opt_str(opts->checkpoint_dir);
    run.image_path = opt_str(opts->image);
    run.ndsm_path = opt_str(opts->ndsm);
    run.out_dir = opt_str(opts->out_dir);
    run.patch = opts->patch;
    run.core = opts->core;
    rsseg::pipeline::run_predict(run);
  });
}

rsseg_status rsseg_refine(const rsseg_refine_options* opts) {
  if (rsseg_status s = require(opts != nullptr, "refine: opts is null")) return s;
  return guarded([&] {
    rsseg::pipeline::RefineRun run;
    run.prob_path = opt_str(opts->prob);
    run.image_path = opt_str(opts->image);
    run.out_dir = opt_str(opts->out_dir);
    run.params.w1 = opts->w1;
    run.params.w2 = opts->w2;
    run.params.sigma_alpha = opts->sigma_alpha;
    run.params.sigma_beta = opts->sigma_beta;
    run.params.sigma_gamma = opts->sigma_gamma;
    run.params.iterations = opts->iterations;
    run.brute_force = opts->brute_force != 0;
    rsseg::pipeline::run_refine(run);
  });
}

rsseg_status rsseg_evaluate(const rsseg_evaluate_options* opts, char** report) {
  if (rsseg_status s =
          require(opts && opts->ref_paths && opts->pred_paths, "evaluate: null argument"))
    return s;
  return guarded([&] {
    rsseg::pipeline::EvaluateRun run;
    for (size_t i = 0; i < opts->count; ++i) {
      run.ref_paths.emplace_back(opts->ref_paths[i]);
      run.pred_paths.emplace_back(opts->pred_paths[i]);
    }
    run.out_dir = opt_str(opts->out_dir);
    run.erode_radius = opts->erode_radius;
    run.ignore_class = opts->ignore_class;
    rsseg::pipeline::EvaluateResult r = rsseg::pipeline::run_evaluate(run);
    if (report) *report = dup_string(r.table + "\n" + r.normalized);
  });
}

rsseg_status rsseg_demo(const rsseg_demo_options* opts, rsseg_demo_result* result,
                        char** report) {
  if (rsseg_status s = require(opts != nullptr, "demo: opts is null")) return s;
  return guarded([&] {
    rsseg::pipeline::DemoRun run;
    run.out_dir = opt_str(opts->out_dir);
    run.seed = opts->seed;
    rsseg::pipeline::DemoResult r = rsseg::pipeline::run_demo(run);
    if (result) {
      result->train_acc = r.train_acc;
      result->raw_oa = r.raw_oa;
      result->refined_oa = r.refined_oa;
    }
    if (report) *report = dup_string(r.report);
  });
}

}  // extern "C"
