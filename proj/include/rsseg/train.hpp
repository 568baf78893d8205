#ifndef RSSEG_TRAIN_HPP
#define RSSEG_TRAIN_HPP

#include <string>
#include <vector>

#include "rsseg/nn.hpp"
#include "rsseg/tensor.hpp"

namespace rsseg::train {

/// Per-class loss weights, order: background, building, car, impervious
/// surface, low vegetation, tree.
struct ClassWeights {
  std::vector<double> w;

  static ClassWeights uniform(std::size_t k) { return {std::vector<double>(k, 1.0)}; }
  /// The weighting used for the 6-class land-cover task.
  static ClassWeights land_cover() { return {{5, 1, 100, 1, 2, 1}}; }
  void validate(std::size_t k) const;
};

struct WceResult {
  double loss_sum = 0.0;    // plain sum over pixels
  double loss_mean = 0.0;   // sum / (N*H*W)
  Tensor grad_logits_sum;   // d(loss_sum)/d(logits), fused softmax+CE
  Tensor grad_logits_mean;  // d(loss_mean)/d(logits)
};

/// Weighted cross entropy of a probability field against one-hot labels.
/// Probabilities are floored at 1e-12 before the log.
WceResult weighted_cross_entropy(const Tensor& probs, const Tensor& onehot,
                                 const ClassWeights& w);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list.
class Adam {
public:
  Adam(std::vector<nn::Network::Param> params, AdamConfig cfg);

  /// One update from gradients aligned with the parameter list.
  /// Throws on non-finite gradients instead of propagating NaN.
  void step(const std::vector<Tensor>& grads);

  std::size_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

private:
  std::vector<nn::Network::Param> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

/// Seeded shuffle split: floor(n * num / (num + den)) train, rest validation.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
Split split_dataset(std::size_t n, std::size_t ratio_num, std::size_t ratio_den,
                    std::uint64_t seed);

struct Sample {
  Tensor image;   // (1, C, h, w)
  LabelMap label;
};

/// Dihedral-4 augmentation: identity, horizontal flip, vertical flip,
/// 180-degree rotation. Requires a square patch.
std::vector<Sample> augment(const Sample& s);

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr = 1e-4;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::size_t ratio_num = 3, ratio_den = 1;
  ClassWeights weights = ClassWeights::land_cover();
  bool augment = true;
  std::string checkpoint_dir;  // best-val checkpoint, empty = skip

  static TrainConfig from_config_file(const std::string& path);
  std::string to_config() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per-pixel
  double val_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  nn::Network net;
  std::vector<EpochStats> history;
};

std::string history_csv(const std::vector<EpochStats>& history);

using EpochCallback = std::function<void(const EpochStats&)>;

TrainResult train_loop(const TrainConfig& cfg, const nn::NetworkSpec& spec,
                       const std::vector<Sample>& dataset,
                       const EpochCallback& on_epoch = {});

}  // namespace rsseg::train

#endif
