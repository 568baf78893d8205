#include "rsseg/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rsseg/config.hpp"
#include "rsseg/io.hpp"

namespace fs = std::filesystem;

namespace rsseg::pipeline {

const std::vector<std::string> kClassNames = {
    "background", "building", "car", "impervious_surface", "low_vegetation", "tree"};
const std::vector<std::size_t> kReportClasses = {1, 2, 3, 4, 5};

Tensor predict_probmap(nn::Network& net, const Tensor& image,
                       const tiling::TileScheme& scheme) {
  net.set_train(false);
  return tiling::tile_predict(
      image, [&net](const Tensor& window) { return net.forward(window); }, scheme);
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

namespace {

struct ClassSignature {
  double bands[3];
  double height;
};

// Spectral signature + height per class, chosen to be separable but close
// enough that noise produces real misclassifications.
constexpr ClassSignature kSignatures[io::kNumClasses] = {
    {{0.95, 0.05, 0.05}, 0.00},  // background
    {{0.05, 0.05, 0.95}, 0.95},  // building
    {{0.95, 0.95, 0.05}, 0.10},  // car
    {{0.60, 0.60, 0.60}, 0.00},  // impervious surface
    {{0.05, 0.95, 0.60}, 0.05},  // low vegetation
    {{0.05, 0.50, 0.05}, 0.70},  // tree
};

void paint_rect(LabelMap& label, std::size_t y0, std::size_t x0, std::size_t h,
                std::size_t w, int cls) {
  for (std::size_t y = y0; y < std::min(label.h, y0 + h); ++y)
    for (std::size_t x = x0; x < std::min(label.w, x0 + w); ++x) label.at(y, x) = cls;
}

}  // namespace

SyntheticTile make_synthetic_tile(std::size_t h, std::size_t w, std::uint64_t seed,
                                  double noise) {
  if (h < 16 || w < 16) throw usage_error("synthetic tile: extent too small");
  std::mt19937_64 rng(seed);
  SyntheticTile tile{Tensor(1, 4, h, w), LabelMap(h, w, io::kImperviousSurface)};
  LabelMap& lab = tile.label;

  auto randu = [&rng](std::size_t lo, std::size_t hi) {
    return lo + rng() % (hi - lo + 1);
  };

  // Background strip along one edge.
  paint_rect(lab, 0, 0, randu(2, h / 8), w, io::kBackground);
  // Vegetation fields, trees, buildings, then cars on top.
  for (int i = 0; i < 3; ++i)
    paint_rect(lab, randu(0, h - 8), randu(0, w - 8), randu(6, h / 3), randu(6, w / 3),
               io::kLowVegetation);
  for (int i = 0; i < 3; ++i)
    paint_rect(lab, randu(0, h - 6), randu(0, w - 6), randu(4, h / 4), randu(4, w / 4),
               io::kTree);
  for (int i = 0; i < 3; ++i)
    paint_rect(lab, randu(0, h - 8), randu(0, w - 8), randu(5, h / 4), randu(5, w / 4),
               io::kBuilding);
  for (int i = 0; i < 4; ++i)
    paint_rect(lab, randu(0, h - 4), randu(0, w - 4), randu(2, 3), randu(3, 5), io::kCar);

  std::normal_distribution<double> jitter(0.0, noise);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const ClassSignature& sig = kSignatures[lab.at(y, x)];
      for (std::size_t c = 0; c < 3; ++c) {
        double v = sig.bands[c] + jitter(rng);
        tile.image.at(0, c, y, x) = v < 0 ? 0 : (v > 1 ? 1 : v);
      }
      double hv = sig.height + jitter(rng);
      tile.image.at(0, 3, y, x) = hv < 0 ? 0 : (hv > 1 ? 1 : hv);
    }
  return tile;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

void run_train(const TrainRun& opts) {
  if (opts.out_dir.empty()) throw usage_error("train: out_dir required");
  fs::create_directories(opts.out_dir);

  nn::NetworkSpec spec;
  if (!opts.spec_config_path.empty()) {
    std::ifstream is(opts.spec_config_path);
    if (!is) throw data_error("cannot open spec config: " + opts.spec_config_path);
    std::ostringstream ss;
    ss << is.rdbuf();
    spec = nn::NetworkSpec::from_config(ss.str());
  }
  train::TrainConfig cfg;
  if (!opts.train_config_path.empty())
    cfg = train::TrainConfig::from_config_file(opts.train_config_path);
  cfg.checkpoint_dir = (fs::path(opts.out_dir) / "checkpoint").string();

  const auto manifest = io::load_manifest(opts.manifest_path);
  std::vector<train::Sample> samples;
  for (const auto& e : manifest) {
    if (e.split != "train") continue;
    Tensor image = io::load_any(e.image);
    if (opts.use_ndsm && !e.ndsm.empty())
      image = io::stack_inputs(image, io::load_any(e.ndsm));
    if (static_cast<int>(image.shape().c()) != spec.in_channels)
      throw data_error("train: tile " + e.image + " has " +
                       std::to_string(image.shape().c()) + " channels, spec expects " +
                       std::to_string(spec.in_channels));
    const LabelMap labels = io::load_labels_png(e.label, io::LabelColorMap::land_cover());
    for (auto& p :
         tiling::extract_training_patches(image, labels, opts.patch_size, opts.patch_stride))
      samples.push_back({std::move(p.image), std::move(p.label)});
  }
  if (samples.empty()) throw data_error("train: manifest yielded no training patches");

  // Log the fully resolved configuration before the run.
  {
    std::ofstream os(fs::path(opts.out_dir) / "config_resolved.cfg");
    os << "# train\n" << cfg.to_config() << "# network\n" << spec.to_config();
    os << "patch_size = " << opts.patch_size << "\npatch_stride = " << opts.patch_stride
       << "\nuse_ndsm = " << (opts.use_ndsm ? "true" : "false") << "\n";
  }
  std::cout << "training on " << samples.size() << " patches\n";

  const train::TrainResult result =
      train::train_loop(cfg, spec, samples, [](const train::EpochStats& e) {
        std::cout << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss "
                  << e.val_loss << " train_acc " << e.train_acc << " val_acc " << e.val_acc
                  << "\n";
      });
  std::ofstream hs(fs::path(opts.out_dir) / "history.csv");
  hs << train::history_csv(result.history);
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

void run_predict(const PredictRun& opts) {
  if (opts.out_dir.empty()) throw usage_error("predict: out_dir required");
  fs::create_directories(opts.out_dir);
  nn::Network net = nn::Network::load_checkpoint(opts.checkpoint_dir);
  Tensor image = io::load_any(opts.image_path);
  if (!opts.ndsm_path.empty()) image = io::stack_inputs(image, io::load_any(opts.ndsm_path));
  if (static_cast<int>(image.shape().c()) != net.spec().in_channels)
    throw data_error("predict: input has " + std::to_string(image.shape().c()) +
                     " channels, checkpoint expects " +
                     std::to_string(net.spec().in_channels));
  tiling::TileScheme scheme{opts.patch, opts.core};
  const Tensor probs = predict_probmap(net, image, scheme);
  save_rt01((fs::path(opts.out_dir) / "probmap.rt").string(), probs);
  io::save_labels_png(argmax_channels(probs), io::LabelColorMap::land_cover(),
                      (fs::path(opts.out_dir) / "labels.png").string());
  std::ofstream os(fs::path(opts.out_dir) / "config_resolved.cfg");
  os << "checkpoint = " << opts.checkpoint_dir << "\nimage = " << opts.image_path
     << "\nndsm = " << opts.ndsm_path << "\npatch = " << opts.patch
     << "\ncore = " << opts.core << "\n";
}

// ---------------------------------------------------------------------------
// refine
// ---------------------------------------------------------------------------

void run_refine(const RefineRun& opts) {
  if (opts.out_dir.empty()) throw usage_error("refine: out_dir required");
  fs::create_directories(opts.out_dir);
  const Tensor probs = load_rt01(opts.prob_path);
  Tensor image = io::load_any(opts.image_path);
  if (image.shape().c() > 3) image = slice_channels(image, 0, 3);
  const Tensor unary = crf::unary_from_probs(probs);
  const crf::InferenceResult r = crf::meanfield_infer(
      unary, image, opts.params,
      opts.brute_force ? crf::FilterPath::BruteForce : crf::FilterPath::Lattice);
  save_rt01((fs::path(opts.out_dir) / "probmap_refined.rt").string(), r.q);
  io::save_labels_png(r.labels, io::LabelColorMap::land_cover(),
                      (fs::path(opts.out_dir) / "labels_refined.png").string());
  std::ofstream os(fs::path(opts.out_dir) / "config_resolved.cfg");
  os << "prob = " << opts.prob_path << "\nimage = " << opts.image_path
     << "\nw1 = " << opts.params.w1 << "\nw2 = " << opts.params.w2
     << "\nsa = " << opts.params.sigma_alpha << "\nsb = " << opts.params.sigma_beta
     << "\nsg = " << opts.params.sigma_gamma << "\niters = " << opts.params.iterations
     << "\nfilter = " << (opts.brute_force ? "brute" : "lattice") << "\n";
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

EvaluateResult run_evaluate(const EvaluateRun& opts) {
  if (opts.ref_paths.size() != opts.pred_paths.size() || opts.ref_paths.empty())
    throw usage_error("evaluate: need matching, non-empty ref/pred lists");
  const auto& palette = io::LabelColorMap::land_cover();
  std::vector<metrics::ConfusionMatrix> parts;
  for (std::size_t i = 0; i < opts.ref_paths.size(); ++i) {
    const LabelMap ref = io::load_labels_png(opts.ref_paths[i], palette);
    const LabelMap pred = io::load_labels_png(opts.pred_paths[i], palette);
    metrics::IgnoreMask mask = metrics::erode_boundaries(ref, opts.erode_radius);
    if (opts.ignore_class >= 0)
      for (std::size_t p = 0; p < ref.size(); ++p)
        if (ref.v[p] == opts.ignore_class) mask[p] = 1;
    parts.push_back(metrics::confusion(ref, pred, io::kNumClasses, mask));
  }
  EvaluateResult r;
  r.cm = metrics::accumulate(parts);
  r.overall_accuracy = metrics::overall_accuracy(r.cm);
  r.table = metrics::report_table(r.cm, kClassNames, kReportClasses);
  r.csv = metrics::report_csv(r.cm, kClassNames, kReportClasses);
  r.normalized = metrics::normalized_matrix_table(r.cm, kClassNames, kReportClasses);
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    std::ofstream(fs::path(opts.out_dir) / "report.txt") << r.table << "\n" << r.normalized;
    std::ofstream(fs::path(opts.out_dir) / "report.csv") << r.csv;
  }
  return r;
}

// ---------------------------------------------------------------------------
// demo
// ---------------------------------------------------------------------------

DemoResult run_demo(const DemoRun& opts) {
  if (opts.out_dir.empty()) throw usage_error("demo: out_dir required");
  fs::create_directories(opts.out_dir);

  nn::NetworkSpec spec;
  spec.variant = nn::Variant::AC;
  spec.in_channels = 4;
  spec.classes = io::kNumClasses;
  spec.encoder_channels = {8, 16};
  spec.bridge_blocks = 2;

  // Training patches from synthetic tiles.
  std::vector<train::Sample> samples;
  for (std::size_t t = 0; t < 6; ++t) {
    SyntheticTile tile = make_synthetic_tile(96, 96, opts.seed * 1000 + t);
    for (auto& p : tiling::extract_training_patches(tile.image, tile.label, 32, 32))
      samples.push_back({std::move(p.image), std::move(p.label)});
  }

  train::TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.lr = 1e-3;
  cfg.epochs = 20;
  cfg.seed = opts.seed;
  // Balanced weighting (square root of inverse class frequency) so rare
  // classes such as car are not drowned out by the dominant surfaces.
  cfg.weights = train::ClassWeights::uniform(io::kNumClasses);
  {
    std::vector<double> cnt(io::kNumClasses, 0.0);
    double total = 0.0;
    for (const auto& s : samples)
      for (int l : s.label.v) {
        cnt[static_cast<std::size_t>(l)] += 1.0;
        total += 1.0;
      }
    for (std::size_t c = 0; c < io::kNumClasses; ++c)
      if (cnt[c] > 0)
        cfg.weights.w[c] = std::sqrt(total / (static_cast<double>(io::kNumClasses) * cnt[c]));
  }
  cfg.checkpoint_dir = (fs::path(opts.out_dir) / "checkpoint").string();

  {
    std::ofstream os(fs::path(opts.out_dir) / "config_resolved.cfg");
    os << "# demo seed " << opts.seed << "\n# train\n" << cfg.to_config() << "# network\n"
       << spec.to_config();
  }

  std::cout << "demo: training on " << samples.size() << " synthetic patches\n";
  train::TrainResult tr =
      train::train_loop(cfg, spec, samples, [](const train::EpochStats& e) {
        std::cout << "epoch " << e.epoch << " train_acc " << e.train_acc << " val_acc "
                  << e.val_acc << "\n";
      });

  // Held-out tile with extents that are not multiples of the core, so the
  // padded tiling path is exercised.
  SyntheticTile test = make_synthetic_tile(150, 100, opts.seed + 99991);
  tiling::TileScheme scheme{64, 32};
  const Tensor probs = predict_probmap(tr.net, test.image, scheme);
  save_rt01((fs::path(opts.out_dir) / "probmap.rt").string(), probs);

  const LabelMap raw = argmax_channels(probs);
  crf::CrfParams params;
  params.w1 = 4.0;
  params.w2 = 2.0;
  params.sigma_alpha = 8.0;
  params.sigma_beta = 40.0;
  params.sigma_gamma = 2.0;
  params.iterations = 5;
  const Tensor spectral = slice_channels(test.image, 0, 3);
  const crf::InferenceResult refined =
      crf::meanfield_infer(crf::unary_from_probs(probs), spectral, params);

  const auto& palette = io::LabelColorMap::land_cover();
  io::save_labels_png(test.label, palette, (fs::path(opts.out_dir) / "reference.png").string());
  io::save_labels_png(raw, palette, (fs::path(opts.out_dir) / "labels_raw.png").string());
  io::save_labels_png(refined.labels, palette,
                      (fs::path(opts.out_dir) / "labels_refined.png").string());
  save_rt01((fs::path(opts.out_dir) / "probmap_refined.rt").string(), refined.q);

  const auto cm_raw = metrics::confusion(test.label, raw, io::kNumClasses);
  const auto cm_ref = metrics::confusion(test.label, refined.labels, io::kNumClasses);

  DemoResult r;
  r.train_acc = tr.history.empty() ? 0.0 : tr.history.back().train_acc;
  r.raw_oa = metrics::overall_accuracy(cm_raw);
  r.refined_oa = metrics::overall_accuracy(cm_ref);
  std::ostringstream report;
  report << "== raw prediction ==\n"
         << metrics::report_table(cm_raw, kClassNames, kReportClasses)
         << "\n== crf refined ==\n"
         << metrics::report_table(cm_ref, kClassNames, kReportClasses) << "\n"
         << metrics::normalized_matrix_table(cm_ref, kClassNames, kReportClasses);
  r.report = report.str();
  std::ofstream(fs::path(opts.out_dir) / "report.txt") << r.report;
  return r;
}

}  // namespace rsseg::pipeline
