#ifndef RSSEG_PIPELINE_HPP
#define RSSEG_PIPELINE_HPP

#include <string>
#include <vector>

#include "rsseg/densecrf.hpp"
#include "rsseg/metrics.hpp"
#include "rsseg/nn.hpp"
#include "rsseg/tiling.hpp"
#include "rsseg/train.hpp"

namespace rsseg::pipeline {

extern const std::vector<std::string> kClassNames;
/// Table columns: every class except background.
extern const std::vector<std::size_t> kReportClasses;

/// Tiled prediction with the network as predict_fn (eval mode).
Tensor predict_probmap(nn::Network& net, const Tensor& image,
                       const tiling::TileScheme& scheme);

// ---------------------------------------------------------------------------
// Synthetic data: a 6-class world of colored shapes with per-class spectral
// signatures and heights, used by the demo and the end-to-end tests.
// ---------------------------------------------------------------------------

struct SyntheticTile {
  Tensor image;   // (1, 4, H, W): 3 spectral bands + height
  LabelMap label;
};

SyntheticTile make_synthetic_tile(std::size_t h, std::size_t w, std::uint64_t seed,
                                  double noise = 0.1);

// ---------------------------------------------------------------------------
// Subcommand implementations. All artifacts go under `out_dir`, and the
// resolved configuration is logged there so a run is reproducible.
// ---------------------------------------------------------------------------

struct TrainRun {
  std::string manifest_path;
  std::string spec_config_path;   // empty = built-in default spec
  std::string train_config_path;  // empty = defaults
  std::string out_dir;
  std::size_t patch_size = 128;
  std::size_t patch_stride = 128;
  bool use_ndsm = true;
};
void run_train(const TrainRun& opts);

struct PredictRun {
  std::string checkpoint_dir;
  std::string image_path;
  std::string ndsm_path;  // empty = image only
  std::string out_dir;
  std::size_t patch = 256;
  std::size_t core = 128;
};
void run_predict(const PredictRun& opts);

struct RefineRun {
  std::string prob_path;   // RT01 probability map
  std::string image_path;  // source image for the appearance kernel
  std::string out_dir;
  crf::CrfParams params;
  bool brute_force = false;
};
void run_refine(const RefineRun& opts);

struct EvaluateRun {
  std::vector<std::string> ref_paths;   // label PNGs
  std::vector<std::string> pred_paths;  // label PNGs, same order
  std::string out_dir;                  // empty = print only
  std::size_t erode_radius = 0;
  int ignore_class = -1;  // mask this class in the reference, -1 = none
};
struct EvaluateResult {
  metrics::ConfusionMatrix cm{6};
  double overall_accuracy = 0.0;
  std::string table;
  std::string csv;
  std::string normalized;
};
EvaluateResult run_evaluate(const EvaluateRun& opts);

struct DemoRun {
  std::string out_dir;
  std::uint64_t seed = 7;
};
struct DemoResult {
  double train_acc = 0.0;
  double raw_oa = 0.0;
  double refined_oa = 0.0;
  std::string report;
};
DemoResult run_demo(const DemoRun& opts);

}  // namespace rsseg::pipeline

#endif
