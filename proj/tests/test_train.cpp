#include <limits>
#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "rsseg/io.hpp"
#include "rsseg/train.hpp"
#include "test_util.hpp"

using namespace rsseg;
using namespace rsseg::train;
using rsseg::testutil::rel_err;

TEST_CASE("class weights: the land-cover weighting and validation") {
  const ClassWeights w = ClassWeights::land_cover();
  REQUIRE(w.w.size() == 6);
  CHECK(w.w[0] == 5.0);   // background
  CHECK(w.w[1] == 1.0);   // building
  CHECK(w.w[2] == 100.0); // car
  CHECK(w.w[3] == 1.0);   // impervious surface
  CHECK(w.w[4] == 2.0);   // low vegetation
  CHECK(w.w[5] == 1.0);   // tree
  w.validate(6);
  CHECK_THROWS_AS(w.validate(3), Error);
  const ClassWeights negative{{1.0, -1.0}};
  CHECK_THROWS_AS(negative.validate(2), Error);
}

TEST_CASE("weighted cross entropy: hand value and fused gradient") {
  // One pixel, two classes, true class 0 with weight 2.
  Tensor probs(1, 2, 1, 1);
  probs.at(0, 0, 0, 0) = 0.25;
  probs.at(0, 1, 0, 0) = 0.75;
  Tensor onehot(1, 2, 1, 1);
  onehot.at(0, 0, 0, 0) = 1.0;
  const ClassWeights w{{2.0, 1.0}};
  const WceResult r = weighted_cross_entropy(probs, onehot, w);
  CHECK(r.loss_sum == doctest::Approx(-2.0 * std::log(0.25)).epsilon(1e-12));
  CHECK(r.loss_mean == doctest::Approx(r.loss_sum).epsilon(1e-12));
  // Fused softmax+CE gradient: w[c*] * (p - y).
  CHECK(r.grad_logits_sum.at(0, 0, 0, 0) == doctest::Approx(2.0 * (0.25 - 1.0)));
  CHECK(r.grad_logits_sum.at(0, 1, 0, 0) == doctest::Approx(2.0 * 0.75));
  CHECK(r.grad_logits_mean == r.grad_logits_sum);
}

TEST_CASE("weighted cross entropy: mean normalizes by pixel count, floor guards log(0)") {
  Tensor probs(1, 2, 2, 2, 0.5);
  Tensor onehot(1, 2, 2, 2);
  for (std::size_t i = 0; i < 4; ++i) onehot.at(0, 0, i / 2, i % 2) = 1.0;
  const WceResult r = weighted_cross_entropy(probs, onehot, ClassWeights::uniform(2));
  CHECK(r.loss_mean == doctest::Approx(r.loss_sum / 4.0));

  Tensor zero(1, 2, 1, 1);
  zero.at(0, 1, 0, 0) = 1.0;
  Tensor hot(1, 2, 1, 1);
  hot.at(0, 0, 0, 0) = 1.0;
  const WceResult z = weighted_cross_entropy(zero, hot, ClassWeights::uniform(2));
  CHECK(z.loss_sum == doctest::Approx(-std::log(1e-12)));

  Tensor nothot(1, 2, 1, 1, 0.5);
  CHECK_THROWS_AS(weighted_cross_entropy(probs, nothot, ClassWeights::uniform(2)), Error);
}

TEST_CASE("weighted cross entropy gradient matches finite differences through softmax") {
  std::mt19937_64 rng(1);
  Tensor logits = Tensor::randn(Shape4(2, 3, 4, 4), rng);
  Tensor onehot(2, 3, 4, 4);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) onehot.at(n, rng() % 3, i, j) = 1.0;
  const ClassWeights w{{1.0, 3.0, 0.5}};
  auto loss = [&] {
    return weighted_cross_entropy(nn::softmax_channels(logits), onehot, w).loss_mean;
  };
  const WceResult r = weighted_cross_entropy(nn::softmax_channels(logits), onehot, w);
  CHECK(rsseg::testutil::max_grad_err(loss, logits, r.grad_logits_mean) < 1e-5);
}

TEST_CASE("adam: first step moves each weight by about lr in the gradient direction") {
  Tensor p(1, 1, 1, 2);
  p[0] = 1.0;
  p[1] = -2.0;
  std::vector<nn::Network::Param> params = {{"p", &p}};
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam adam(params, cfg);
  Tensor g(1, 1, 1, 2);
  g[0] = 0.5;
  g[1] = -3.0;
  adam.step({g});
  // m_hat = g, v_hat = g^2 -> update = -lr * g / (|g| + eps)
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-10));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.1 * 3.0 / (3.0 + 1e-8)).epsilon(1e-10));
  CHECK(adam.step_count() == 1);
}

TEST_CASE("adam: bias correction across steps matches the reference recurrence") {
  Tensor p(1, 1, 1, 1);
  p[0] = 0.0;
  Adam adam({{"p", &p}}, AdamConfig{});
  double m = 0.0, v = 0.0, ref = 0.0;
  const AdamConfig c;
  const double grads[4] = {1.0, -0.5, 2.0, 0.25};
  for (int t = 1; t <= 4; ++t) {
    Tensor g(1, 1, 1, 1);
    g[0] = grads[t - 1];
    adam.step({g});
    m = c.beta1 * m + (1 - c.beta1) * grads[t - 1];
    v = c.beta2 * v + (1 - c.beta2) * grads[t - 1] * grads[t - 1];
    const double mh = m / (1 - std::pow(c.beta1, t));
    const double vh = v / (1 - std::pow(c.beta2, t));
    ref -= c.lr * mh / (std::sqrt(vh) + c.epsilon);
    CHECK(p[0] == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("adam rejects non-finite gradients") {
  Tensor p(1, 1, 1, 1, 1.0);
  Adam adam({{"p", &p}}, AdamConfig{});
  Tensor g(1, 1, 1, 1);
  g[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adam.step({g}), Error);
}

TEST_CASE("split: floor(n * num / (num + den)), deterministic, disjoint, complete") {
  Split s = split_dataset(10, 3, 1, 42);
  CHECK(s.train.size() == 7);  // floor(10 * 3/4)
  CHECK(s.val.size() == 3);
  Split again = split_dataset(10, 3, 1, 42);
  CHECK(s.train == again.train);
  CHECK(s.val == again.val);
  Split other = split_dataset(10, 3, 1, 43);
  CHECK(s.train != other.train);

  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  CHECK(all.size() == 10);
  CHECK_THROWS_AS(split_dataset(1, 3, 1, 0), Error);
}

TEST_CASE("augment: four dihedral variants, consistent between image and label") {
  std::mt19937_64 rng(2);
  Sample s{Tensor::randn(Shape4(1, 2, 4, 4), rng), LabelMap(4, 4)};
  for (std::size_t i = 0; i < 16; ++i) s.label.v[i] = static_cast<int>(i);
  auto out = augment(s);
  REQUIRE(out.size() == 4);
  CHECK(out[0].image == s.image);

  std::set<std::vector<int>> distinct;
  for (const auto& o : out) distinct.insert(o.label.v);
  CHECK(distinct.size() == 4);

  // Pixel (y, x) carries its label along with the image transform: check a
  // marked pixel stays aligned in every variant.
  for (const auto& o : out) {
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        const int lab = o.label.at(y, x);
        const std::size_t oy = static_cast<std::size_t>(lab) / 4;
        const std::size_t ox = static_cast<std::size_t>(lab) % 4;
        for (std::size_t c = 0; c < 2; ++c)
          CHECK(o.image.at(0, c, y, x) == s.image.at(0, c, oy, ox));
      }
  }

  Sample rect{Tensor(1, 1, 2, 4, 0.0), LabelMap(2, 4)};
  CHECK_THROWS_AS(augment(rect), Error);
}

TEST_CASE("train config file round trip") {
  const std::string path = "train_cfg_test.cfg";
  {
    std::ofstream os(path);
    os << "batch_size = 4\nlr = 0.01\nepochs = 3\nseed = 9\nsplit_ratio = 4:1\n"
          "class_weights = 1,1,1,1,1,1\naugment = false\n";
  }
  TrainConfig cfg = TrainConfig::from_config_file(path);
  CHECK(cfg.batch_size == 4);
  CHECK(cfg.lr == doctest::Approx(0.01));
  CHECK(cfg.epochs == 3);
  CHECK(cfg.seed == 9);
  CHECK(cfg.ratio_num == 4);
  CHECK(cfg.ratio_den == 1);
  CHECK(cfg.weights.w == std::vector<double>(6, 1.0));
  CHECK_FALSE(cfg.augment);

  TrainConfig defaults;
  CHECK(defaults.batch_size == 16);
  CHECK(defaults.lr == doctest::Approx(1e-4));
  CHECK(defaults.ratio_num == 3);
  CHECK(defaults.ratio_den == 1);
  CHECK(defaults.weights.w == ClassWeights::land_cover().w);
  CHECK_FALSE(defaults.to_config().empty());
}

TEST_CASE("train loop learns a separable two-class task and logs history") {
  // Class 0: low intensity, class 1: high intensity; trivially separable.
  std::mt19937_64 rng(3);
  std::vector<Sample> data;
  for (int i = 0; i < 8; ++i) {
    Sample s{Tensor(1, 2, 8, 8), LabelMap(8, 8)};
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const int cls = (x < 4) ? 0 : 1;
        s.label.at(y, x) = cls;
        for (std::size_t c = 0; c < 2; ++c)
          s.image.at(0, c, y, x) = (cls ? 0.9 : 0.1) + 0.02 * ((rng() % 100) / 100.0);
      }
    data.push_back(std::move(s));
  }
  nn::NetworkSpec spec;
  spec.variant = nn::Variant::AC;
  spec.in_channels = 2;
  spec.classes = 2;
  spec.encoder_channels = {4};
  spec.bridge_blocks = 1;

  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.lr = 1e-2;
  cfg.epochs = 6;
  cfg.seed = 1;
  cfg.weights = ClassWeights::uniform(2);
  cfg.augment = true;

  std::size_t calls = 0;
  TrainResult r = train_loop(cfg, spec, data, [&](const EpochStats&) { ++calls; });
  REQUIRE(r.history.size() == 6);
  CHECK(calls == 6);
  CHECK(r.history.back().train_loss < r.history.front().train_loss);
  CHECK(r.history.back().train_acc > 0.9);
  CHECK(r.history.back().val_acc > 0.9);

  const std::string csv = history_csv(r.history);
  CHECK(csv.find("epoch") != std::string::npos);
  CHECK(csv.find('\n') != std::string::npos);
}
