#include "rsseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rsseg/config.hpp"
#include "rsseg/io.hpp"

namespace rsseg::train {

void ClassWeights::validate(std::size_t k) const {
  if (w.size() != k)
    throw usage_error("class weights: expected " + std::to_string(k) + " entries, got " +
                      std::to_string(w.size()));
  for (double x : w)
    if (!(x > 0)) throw usage_error("class weights must be positive");
}

WceResult weighted_cross_entropy(const Tensor& probs, const Tensor& onehot,
                                 const ClassWeights& cw) {
  const Shape4& s = probs.shape();
  if (onehot.shape() != s)
    throw usage_error("weighted_cross_entropy: shape mismatch " + s.str() + " vs " +
                      onehot.shape().str());
  cw.validate(s.c());
  const std::size_t C = s.c(), plane = s.h() * s.w();
  const std::size_t pixels = s.n() * plane;
  if (pixels == 0) throw usage_error("weighted_cross_entropy: empty input");

  WceResult r;
  r.grad_logits_sum = Tensor(s);
  double loss = 0.0;
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      int cls = -1;
      double ysum = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double y = onehot[(n * C + c) * plane + i];
        ysum += y;
        if (y == 1.0) cls = static_cast<int>(c);
      }
      if (cls < 0 || ysum != 1.0)
        throw usage_error("weighted_cross_entropy: one-hot pixel does not sum to 1");
      const double wc = cw.w[static_cast<std::size_t>(cls)];
      const double p = std::max(probs[(n * C + cls) * plane + i], 1e-12);
      loss -= wc * std::log(p);
      // Fused softmax + cross-entropy gradient with respect to logits.
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t idx = (n * C + c) * plane + i;
        const double y = onehot[idx];
        r.grad_logits_sum[idx] = wc * (probs[idx] - y);
      }
    }
  }
  r.loss_sum = loss;
  r.loss_mean = loss / static_cast<double>(pixels);
  r.grad_logits_mean = mul(r.grad_logits_sum, 1.0 / static_cast<double>(pixels));
  return r;
}

Adam::Adam(std::vector<nn::Network::Param> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.value->shape());
    v_.emplace_back(p.value->shape());
  }
}

void Adam::step(const std::vector<Tensor>& grads) {
  if (grads.size() != params_.size())
    throw usage_error("adam: gradient count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params_[i].value->shape())
      throw usage_error("adam: gradient shape mismatch for " + params_[i].name);
    if (!grads[i].all_finite())
      throw numeric_error("adam: non-finite gradient for " + params_[i].name);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i].value;
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

Split split_dataset(std::size_t n, std::size_t ratio_num, std::size_t ratio_den,
                    std::uint64_t seed) {
  if (n < 2) throw usage_error("split_dataset: need at least 2 items");
  if (ratio_num == 0 || ratio_den == 0)
    throw usage_error("split_dataset: ratio components must be positive");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t n_train = n * ratio_num / (ratio_num + ratio_den);
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<long>(n_train));
  s.val.assign(idx.begin() + static_cast<long>(n_train), idx.end());
  return s;
}

namespace {

enum class Dihedral { Identity, HFlip, VFlip, Rot180 };

Sample transform(const Sample& s, Dihedral d) {
  const Shape4& sh = s.image.shape();
  const std::size_t H = sh.h(), W = sh.w();
  Sample out{Tensor(sh), LabelMap(H, W)};
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      std::size_t sy = y, sx = x;
      switch (d) {
        case Dihedral::Identity: break;
        case Dihedral::HFlip: sx = W - 1 - x; break;
        case Dihedral::VFlip: sy = H - 1 - y; break;
        case Dihedral::Rot180: sy = H - 1 - y; sx = W - 1 - x; break;
      }
      for (std::size_t c = 0; c < sh.c(); ++c)
        out.image.at(0, c, y, x) = s.image.at(0, c, sy, sx);
      out.label.at(y, x) = s.label.at(sy, sx);
    }
  }
  return out;
}

}  // namespace

std::vector<Sample> augment(const Sample& s) {
  const Shape4& sh = s.image.shape();
  if (sh.h() != sh.w())
    throw usage_error("augment: patch must be square, got " + sh.str());
  if (s.label.h != sh.h() || s.label.w != sh.w())
    throw usage_error("augment: label extent does not match image");
  return {transform(s, Dihedral::Identity), transform(s, Dihedral::HFlip),
          transform(s, Dihedral::VFlip), transform(s, Dihedral::Rot180)};
}

TrainConfig TrainConfig::from_config_file(const std::string& path) {
  const Config cfg = Config::load(path);
  TrainConfig tc;
  tc.batch_size = static_cast<std::size_t>(cfg.get_long("batch_size", 16));
  tc.lr = cfg.get_double("lr", 1e-4);
  tc.epochs = static_cast<std::size_t>(cfg.get_long("epochs", 10));
  tc.seed = static_cast<std::uint64_t>(cfg.get_long("seed", 0));
  if (auto ratio = cfg.get("split_ratio")) {
    const auto parts = split(*ratio, ':');
    if (parts.size() != 2) throw data_error("split_ratio: expected num:den");
    tc.ratio_num = std::stoul(parts[0]);
    tc.ratio_den = std::stoul(parts[1]);
  }
  if (auto weights = cfg.get("class_weights")) {
    tc.weights.w.clear();
    for (const auto& tok : split(*weights, ',')) tc.weights.w.push_back(std::stod(tok));
  }
  tc.augment = cfg.get_bool("augment", true);
  tc.checkpoint_dir = cfg.get_or("checkpoint_dir", "");
  return tc;
}

std::string TrainConfig::to_config() const {
  Config cfg;
  cfg.set("batch_size", std::to_string(batch_size));
  cfg.set("lr", std::to_string(lr));
  cfg.set("epochs", std::to_string(epochs));
  cfg.set("seed", std::to_string(seed));
  cfg.set("split_ratio", std::to_string(ratio_num) + ":" + std::to_string(ratio_den));
  std::string w;
  for (std::size_t i = 0; i < weights.w.size(); ++i) {
    if (i) w += ",";
    std::ostringstream os;
    os << weights.w[i];
    w += os.str();
  }
  cfg.set("class_weights", w);
  cfg.set("augment", augment ? "true" : "false");
  if (!checkpoint_dir.empty()) cfg.set("checkpoint_dir", checkpoint_dir);
  return cfg.str();
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,train_acc,val_acc\n";
  for (const auto& e : history)
    os << e.epoch << "," << e.train_loss << "," << e.val_loss << "," << e.train_acc << ","
       << e.val_acc << "\n";
  return os.str();
}

namespace {

struct Batch {
  Tensor images;
  Tensor onehot;
  std::vector<LabelMap> labels;
};

Batch assemble(const std::vector<Sample>& samples, const std::vector<std::size_t>& order,
               std::size_t begin, std::size_t end, int classes) {
  const Shape4& sh = samples[order[begin]].image.shape();
  const std::size_t B = end - begin;
  Batch b{Tensor(B, sh.c(), sh.h(), sh.w()),
          Tensor(B, static_cast<std::size_t>(classes), sh.h(), sh.w()),
          {}};
  const std::size_t plane = sh.h() * sh.w();
  for (std::size_t i = 0; i < B; ++i) {
    const Sample& s = samples[order[begin + i]];
    if (s.image.shape() != sh)
      throw usage_error("train: all patches must share one shape (" + sh.str() + " vs " +
                        s.image.shape().str() + ")");
    std::copy(s.image.data(), s.image.data() + s.image.numel(),
              b.images.data() + i * sh.c() * plane);
    const Tensor oh = io::one_hot(s.label, classes);
    std::copy(oh.data(), oh.data() + oh.numel(),
              b.onehot.data() + i * static_cast<std::size_t>(classes) * plane);
    b.labels.push_back(s.label);
  }
  return b;
}

double pixel_accuracy(const Tensor& probs, const std::vector<LabelMap>& labels) {
  std::size_t hits = 0, total = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const LabelMap pred = argmax_channels(probs, n);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      hits += pred.v[i] == labels[n].v[i];
      ++total;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace

TrainResult train_loop(const TrainConfig& cfg, const nn::NetworkSpec& spec,
                       const std::vector<Sample>& dataset,
                       const EpochCallback& on_epoch) {
  spec.validate();
  cfg.weights.validate(static_cast<std::size_t>(spec.classes));
  if (cfg.batch_size < 1) throw usage_error("train: batch_size must be >= 1");
  if (dataset.empty()) throw usage_error("train: empty dataset");

  const Split sp = split_dataset(dataset.size(), cfg.ratio_num, cfg.ratio_den, cfg.seed);
  std::vector<Sample> train_set, val_set;
  for (std::size_t i : sp.train) {
    if (cfg.augment) {
      for (auto& a : augment(dataset[i])) train_set.push_back(std::move(a));
    } else {
      train_set.push_back(dataset[i]);
    }
  }
  for (std::size_t i : sp.val) val_set.push_back(dataset[i]);

  TrainResult result;
  result.net = nn::Network::build(spec, cfg.seed);
  nn::Network& net = result.net;

  Adam adam(net.params(), AdamConfig{.lr = cfg.lr});
  std::mt19937_64 rng(cfg.seed + 0x9e3779b97f4a7c15ULL);

  auto evaluate = [&](const std::vector<Sample>& set, double& loss, double& acc) {
    if (set.empty()) {
      loss = acc = 0.0;
      return;
    }
    net.set_train(false);
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    double loss_sum = 0.0, acc_sum = 0.0;
    std::size_t pixels = 0, count = 0;
    for (std::size_t b = 0; b < set.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(set.size(), b + cfg.batch_size);
      Batch batch = assemble(set, order, b, e, spec.classes);
      const Tensor probs = net.forward(batch.images);
      const WceResult w = weighted_cross_entropy(probs, batch.onehot, cfg.weights);
      loss_sum += w.loss_sum;
      pixels += probs.numel() / probs.shape().c();
      acc_sum += pixel_accuracy(probs, batch.labels) * static_cast<double>(e - b);
      count += e - b;
    }
    loss = loss_sum / static_cast<double>(pixels);
    acc = acc_sum / static_cast<double>(count);
  };

  double best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    net.set_train(true);
    double loss_sum = 0.0, acc_sum = 0.0;
    std::size_t pixels = 0, count = 0;
    for (std::size_t b = 0; b < train_set.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(train_set.size(), b + cfg.batch_size);
      Batch batch = assemble(train_set, order, b, e, spec.classes);
      const Tensor probs = net.forward(batch.images);
      const WceResult w = weighted_cross_entropy(probs, batch.onehot, cfg.weights);
      if (!std::isfinite(w.loss_sum)) throw numeric_error("train: non-finite loss");
      net.backward_from_logits(w.grad_logits_mean);
      adam.step(net.param_grads());
      loss_sum += w.loss_sum;
      pixels += probs.numel() / probs.shape().c();
      acc_sum += pixel_accuracy(probs, batch.labels) * static_cast<double>(e - b);
      count += e - b;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = count ? loss_sum / static_cast<double>(pixels) : 0.0;
    stats.train_acc = count ? acc_sum / static_cast<double>(count) : 0.0;
    evaluate(val_set, stats.val_loss, stats.val_acc);
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
    const double score = val_set.empty() ? stats.train_loss : stats.val_loss;
    if (!cfg.checkpoint_dir.empty() && score < best_val_loss) {
      best_val_loss = score;
      net.save_checkpoint(cfg.checkpoint_dir);
    }
  }
  net.set_train(false);
  return result;
}

}  // namespace rsseg::train
