// rsseg command line front end. Everything goes through the C API in rsseg.h;
// this file only parses arguments and formats output.
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rsseg.h"

namespace {

int finish(rsseg_status status, const char* verb) {
  if (status == RSSEG_OK) return 0;
  std::fprintf(stderr, "rsseg %s: error: %s\n", verb, rsseg_last_error());
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rsseg: encoder-decoder semantic segmentation with dense CRF refinement"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(rsseg_version()));

  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = all cores)");

  // --- train ---
  std::string tr_manifest, tr_spec, tr_config, tr_out;
  std::size_t tr_patch = 128, tr_stride = 128;
  bool tr_no_ndsm = false;
  CLI::App* train = app.add_subcommand("train", "train a network from a tile manifest");
  train->add_option("--manifest", tr_manifest, "tab-separated tile manifest")->required();
  train->add_option("--spec", tr_spec, "network spec config (default: built-in)");
  train->add_option("--config", tr_config, "training config (default: built-in)");
  train->add_option("--out", tr_out, "output directory")->required();
  train->add_option("--patch", tr_patch, "training patch size");
  train->add_option("--stride", tr_stride, "training patch stride");
  train->add_flag("--no-ndsm", tr_no_ndsm, "ignore the ndsm column of the manifest");

  // --- predict ---
  std::string pr_checkpoint, pr_image, pr_ndsm, pr_out;
  std::size_t pr_patch = 256, pr_core = 128;
  CLI::App* predict = app.add_subcommand("predict", "tiled prediction over a full tile");
  predict->add_option("--checkpoint", pr_checkpoint, "checkpoint directory")->required();
  predict->add_option("--image", pr_image, "input image (.png or .rt)")->required();
  predict->add_option("--ndsm", pr_ndsm, "ndsm raster stacked as an extra channel");
  predict->add_option("--out", pr_out, "output directory")->required();
  predict->add_option("--patch", pr_patch, "prediction window size");
  predict->add_option("--core", pr_core, "kept central crop (stride); patch = 2*core");

  // --- refine ---
  std::string rf_prob, rf_image, rf_out;
  double rf_w1 = 10.0, rf_w2 = 3.0, rf_sa = 80.0, rf_sb = 13.0, rf_sg = 3.0;
  int rf_iters = 10;
  bool rf_brute = false;
  CLI::App* refine = app.add_subcommand("refine", "dense CRF refinement of a probability map");
  refine->add_option("--prob", rf_prob, "probability map (.rt)")->required();
  refine->add_option("--image", rf_image, "source image for the appearance kernel")->required();
  refine->add_option("--out", rf_out, "output directory")->required();
  refine->add_option("--w1", rf_w1, "appearance kernel weight");
  refine->add_option("--w2", rf_w2, "smoothness kernel weight");
  refine->add_option("--sa", rf_sa, "appearance spatial sigma");
  refine->add_option("--sb", rf_sb, "appearance color sigma (8-bit units)");
  refine->add_option("--sg", rf_sg, "smoothness spatial sigma");
  refine->add_option("--iters", rf_iters, "mean-field iterations");
  refine->add_flag("--brute-force", rf_brute, "exact O(N^2) filtering (small inputs)");

  // --- evaluate ---
  std::vector<std::string> ev_ref, ev_pred;
  std::string ev_out;
  std::size_t ev_erode = 0;
  int ev_ignore = -1;
  CLI::App* evaluate = app.add_subcommand("evaluate", "confusion-matrix metrics");
  evaluate->add_option("--ref", ev_ref, "reference label PNGs")->required();
  evaluate->add_option("--pred", ev_pred, "predicted label PNGs, same order")->required();
  evaluate->add_option("--out", ev_out, "output directory (optional)");
  evaluate->add_option("--erode", ev_erode, "ignore pixels within this radius of class edges");
  evaluate->add_option("--ignore-class", ev_ignore, "reference class to exclude (-1 = none)");

  // --- demo ---
  std::string dm_out;
  std::uint64_t dm_seed = 7;
  CLI::App* demo = app.add_subcommand("demo", "end-to-end run on synthetic data");
  demo->add_option("--out", dm_out, "output directory")->required();
  demo->add_option("--seed", dm_seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(RSSEG_ERR_USAGE);
  }

  rsseg_set_threads(threads);

  if (train->parsed()) {
    rsseg_train_options o{};
    o.manifest = tr_manifest.c_str();
    o.spec_config = tr_spec.empty() ? nullptr : tr_spec.c_str();
    o.train_config = tr_config.empty() ? nullptr : tr_config.c_str();
    o.out_dir = tr_out.c_str();
    o.patch_size = tr_patch;
    o.patch_stride = tr_stride;
    o.use_ndsm = tr_no_ndsm ? 0 : 1;
    return finish(rsseg_train(&o), "train");
  }

  if (predict->parsed()) {
    rsseg_predict_options o{};
    o.checkpoint_dir = pr_checkpoint.c_str();
    o.image = pr_image.c_str();
    o.ndsm = pr_ndsm.empty() ? nullptr : pr_ndsm.c_str();
    o.out_dir = pr_out.c_str();
    o.patch = pr_patch;
    o.core = pr_core;
    return finish(rsseg_predict(&o), "predict");
  }

  if (refine->parsed()) {
    rsseg_refine_options o{};
    o.prob = rf_prob.c_str();
    o.image = rf_image.c_str();
    o.out_dir = rf_out.c_str();
    o.w1 = rf_w1;
    o.w2 = rf_w2;
    o.sigma_alpha = rf_sa;
    o.sigma_beta = rf_sb;
    o.sigma_gamma = rf_sg;
    o.iterations = rf_iters;
    o.brute_force = rf_brute ? 1 : 0;
    return finish(rsseg_refine(&o), "refine");
  }

  if (evaluate->parsed()) {
    if (ev_ref.size() != ev_pred.size()) {
      std::fprintf(stderr, "rsseg evaluate: error: --ref and --pred counts differ\n");
      return static_cast<int>(RSSEG_ERR_USAGE);
    }
    std::vector<const char*> refs, preds;
    for (const auto& s : ev_ref) refs.push_back(s.c_str());
    for (const auto& s : ev_pred) preds.push_back(s.c_str());
    rsseg_evaluate_options o{};
    o.ref_paths = refs.data();
    o.pred_paths = preds.data();
    o.count = refs.size();
    o.out_dir = ev_out.empty() ? nullptr : ev_out.c_str();
    o.erode_radius = ev_erode;
    o.ignore_class = ev_ignore;
    char* report = nullptr;
    const rsseg_status s = rsseg_evaluate(&o, &report);
    if (s == RSSEG_OK && report) std::printf("%s", report);
    rsseg_free(report);
    return finish(s, "evaluate");
  }

  if (demo->parsed()) {
    rsseg_demo_options o{};
    o.out_dir = dm_out.c_str();
    o.seed = dm_seed;
    rsseg_demo_result r{};
    char* report = nullptr;
    const rsseg_status s = rsseg_demo(&o, &r, &report);
    if (s == RSSEG_OK) {
      if (report) std::printf("%s", report);
      std::printf("train accuracy: %.4f\n", r.train_acc);
      std::printf("overall accuracy (raw): %.4f\n", r.raw_oa);
      std::printf("overall accuracy (refined): %.4f\n", r.refined_oa);
    }
    rsseg_free(report);
    return finish(s, "demo");
  }

  return static_cast<int>(RSSEG_ERR_USAGE);
}
