#include <cmath>

#include "doctest.h"
#include "rsseg/densecrf.hpp"
#include "test_util.hpp"

using namespace rsseg;
using namespace rsseg::crf;
using rsseg::testutil::rel_err;

TEST_CASE("param validation") {
  CrfParams p;
  p.validate();
  p.sigma_alpha = 0.0;
  CHECK_THROWS_AS(p.validate(), Error);
  p = CrfParams{};
  p.iterations = 0;
  CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("spatial and bilateral feature layout") {
  FeatureField sp = spatial_features(2, 3, 2.0);
  REQUIRE(sp.dim == 2);
  REQUIRE(sp.pixels == 6);
  CHECK(sp.at(0)[0] == 0.0);
  CHECK(sp.at(5)[0] == doctest::Approx(0.5));  // y=1 / 2
  CHECK(sp.at(5)[1] == doctest::Approx(1.0));  // x=2 / 2

  Tensor img(1, 3, 1, 2);
  img.at(0, 0, 0, 1) = 0.5;
  FeatureField bi = bilateral_features(img, 4.0, 10.0);
  REQUIRE(bi.dim == 5);
  CHECK(bi.at(1)[1] == doctest::Approx(0.25));   // x=1 / 4
  CHECK(bi.at(1)[2] == doctest::Approx(12.75));  // 0.5 * 255 / 10
}

TEST_CASE("unary is -log of floored probabilities") {
  Tensor probs(1, 2, 1, 2);
  probs.at(0, 0, 0, 0) = 0.8;
  probs.at(0, 1, 0, 0) = 0.2;
  probs.at(0, 0, 0, 1) = 0.0;
  probs.at(0, 1, 0, 1) = 1.0;
  Tensor u = unary_from_probs(probs);
  CHECK(u.at(0, 0, 0, 0) == doctest::Approx(-std::log(0.8)));
  CHECK(u.at(0, 0, 0, 1) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("kernel_eval: hand-computed two-kernel value") {
  CrfParams p;
  p.w1 = 10.0;
  p.w2 = 3.0;
  p.sigma_alpha = 80.0;
  p.sigma_beta = 13.0;
  p.sigma_gamma = 3.0;
  const double pi[2] = {0.0, 0.0}, pj[2] = {3.0, 4.0};
  const double ci[3] = {10, 20, 30}, cj[3] = {13, 24, 30};
  const double want = 10.0 * std::exp(-25.0 / (2 * 80.0 * 80.0) -
                                      25.0 / (2 * 13.0 * 13.0)) +
                      3.0 * std::exp(-25.0 / (2 * 3.0 * 3.0));
  CHECK(kernel_eval(pi, pj, ci, cj, 3, p) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("potts compatibility") {
  CHECK(potts(1, 1) == 0);
  CHECK(potts(0, 1) == 1);
}

TEST_CASE("energy: hand value on a two-pixel instance") {
  // Two horizontally adjacent pixels, two classes, equal colors.
  Tensor unary(1, 2, 1, 2);
  unary.at(0, 0, 0, 0) = 0.5;
  unary.at(0, 1, 0, 0) = 1.5;
  unary.at(0, 0, 0, 1) = 2.0;
  unary.at(0, 1, 0, 1) = 0.25;
  Tensor img(1, 3, 1, 2, 0.5);  // identical colors
  CrfParams p;
  p.w1 = 2.0;
  p.w2 = 1.0;
  p.sigma_alpha = 10.0;
  p.sigma_beta = 5.0;
  p.sigma_gamma = 4.0;

  LabelMap same(1, 2, 0);
  // Labels equal: pairwise term vanishes under Potts.
  CHECK(energy(same, unary, img, p) == doctest::Approx(0.5 + 2.0).epsilon(1e-12));

  LabelMap diff(1, 2, 0);
  diff.at(0, 1) = 1;
  // Ordered pairs (i,j) and (j,i): the kernel value counts twice.
  const double k = 2.0 * std::exp(-1.0 / (2 * 100.0)) + 1.0 * std::exp(-1.0 / (2 * 16.0));
  CHECK(energy(diff, unary, img, p) == doctest::Approx(0.5 + 0.25 + 2.0 * k).epsilon(1e-12));
}

TEST_CASE("energy guard rejects oversized instances") {
  Tensor unary(1, 2, 200, 200);
  Tensor img(1, 3, 200, 200);
  LabelMap l(200, 200, 0);
  CHECK_THROWS_AS(energy(l, unary, img, CrfParams{}, 10000), Error);
}

TEST_CASE("brute-force gaussian filter: three-pixel hand computation") {
  // Pre-scaled 1-d features at 0, 1, 3; one value channel.
  FeatureField ff{1, 3, {0.0, 1.0, 3.0}};
  const std::vector<double> v = {1.0, 10.0, 100.0};
  const auto out = gaussian_filter_bruteforce(v, 1, ff);
  const double g01 = std::exp(-0.5), g02 = std::exp(-4.5), g12 = std::exp(-2.0);
  CHECK(out[0] == doctest::Approx(g01 * 10.0 + g02 * 100.0).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(g01 * 1.0 + g12 * 100.0).epsilon(1e-12));
  CHECK(out[2] == doctest::Approx(g02 * 1.0 + g12 * 10.0).epsilon(1e-12));
}

TEST_CASE("permutohedral filter approximates the brute-force oracle within 5%") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 16, w = 16, n = h * w, k = 3;
    Tensor img = Tensor::rand_uniform(Shape4(1, 3, h, w), rng);
    FeatureField ff = bilateral_features(img, 8.0, 60.0);
    std::vector<double> values(k * n);
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = static_cast<double>(rng() % 1000) / 1000.0;

    const auto exact = gaussian_filter_bruteforce(values, k, ff, n * n + 1);
    const auto approx = permutohedral_filter(values, k, ff);
    REQUIRE(approx.size() == exact.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < exact.size(); ++i) {
      num += (approx[i] - exact[i]) * (approx[i] - exact[i]);
      den += exact[i] * exact[i];
    }
    CHECK(std::sqrt(num / den) < 0.05);
  }
}

TEST_CASE("mean-field: lattice and brute-force paths agree on labels") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t h = 16, w = 16;
    Tensor img = Tensor::rand_uniform(Shape4(1, 3, h, w), rng);
    Tensor probs = Tensor::rand_uniform(Shape4(1, 3, h, w), rng, 0.05, 1.0);
    // normalize channels
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (std::size_t c = 0; c < 3; ++c) s += probs.at(0, c, y, x);
        for (std::size_t c = 0; c < 3; ++c) probs.at(0, c, y, x) /= s;
      }
    Tensor unary = unary_from_probs(probs);
    CrfParams p;
    p.w1 = 4.0;
    p.w2 = 2.0;
    p.sigma_alpha = 8.0;
    p.sigma_beta = 40.0;
    p.sigma_gamma = 2.0;
    p.iterations = 5;
    InferenceResult a = meanfield_infer(unary, img, p, FilterPath::Lattice);
    InferenceResult b = meanfield_infer(unary, img, p, FilterPath::BruteForce);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < h * w; ++i) agree += a.labels.v[i] == b.labels.v[i];
    CHECK(static_cast<double>(agree) / (h * w) >= 0.98);
  }
}

TEST_CASE("mean-field output rows sum to one") {
  std::mt19937_64 rng(3);
  Tensor img = Tensor::rand_uniform(Shape4(1, 3, 12, 12), rng);
  Tensor unary = Tensor::rand_uniform(Shape4(1, 4, 12, 12), rng, 0.0, 3.0);
  CrfParams p;
  p.iterations = 3;
  InferenceResult r = meanfield_infer(unary, img, p);
  for (std::size_t y = 0; y < 12; ++y)
    for (std::size_t x = 0; x < 12; ++x) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += r.q.at(0, c, y, x);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("degenerate kernels (w1 = w2 = 0): argmax equals unary argmax") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor img = Tensor::rand_uniform(Shape4(1, 3, 10, 10), rng);
    Tensor unary = Tensor::rand_uniform(Shape4(1, 3, 10, 10), rng, 0.0, 3.0);
    CrfParams p;
    p.w1 = 0.0;
    p.w2 = 0.0;
    p.iterations = 5;
    InferenceResult r = meanfield_infer(unary, img, p);
    Tensor neg = mul(unary, -1.0);
    CHECK(r.labels == argmax_channels(neg));
  }
}

TEST_CASE("denoising: mean-field strictly improves a flipped-pixel unary") {
  std::mt19937_64 rng(5);
  const std::size_t h = 32, w = 32;
  LabelMap truth(h, w, 0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (x >= w / 2) truth.at(y, x) = 1;
      if (y >= h / 2 && x >= w / 4 && x < 3 * w / 4) truth.at(y, x) = 2;
    }
  const double colors[3][3] = {{0.9, 0.1, 0.1}, {0.1, 0.9, 0.1}, {0.1, 0.1, 0.9}};
  Tensor img(1, 3, h, w);
  Tensor probs(1, 3, h, w);
  std::size_t correct_before = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const int t = truth.at(y, x);
      for (std::size_t c = 0; c < 3; ++c)
        img.at(0, c, y, x) = colors[t][c] + 0.02 * ((rng() % 100) / 100.0 - 0.5);
      int noisy = t;
      if (rng() % 100 < 15) noisy = static_cast<int>((t + 1 + rng() % 2) % 3);
      for (std::size_t c = 0; c < 3; ++c)
        probs.at(0, c, y, x) = (static_cast<int>(c) == noisy) ? 0.8 : 0.1;
      correct_before += noisy == t;
    }
  CrfParams p;
  p.w1 = 6.0;
  p.w2 = 2.0;
  p.sigma_alpha = 12.0;
  p.sigma_beta = 30.0;
  p.sigma_gamma = 2.0;
  p.iterations = 10;
  InferenceResult r = meanfield_infer(unary_from_probs(probs), img, p);
  std::size_t correct_after = 0;
  for (std::size_t i = 0; i < h * w; ++i) correct_after += r.labels.v[i] == truth.v[i];
  CHECK(correct_after > correct_before);
  // Expect a sizable gain on this task, not a marginal one.
  CHECK(correct_after - correct_before >= h * w * 3 / 100);
}

TEST_CASE("brute-force filter guard") {
  FeatureField ff{1, 200 * 200, std::vector<double>(200 * 200, 0.0)};
  std::vector<double> v(200 * 200, 1.0);
  CHECK_THROWS_AS(gaussian_filter_bruteforce(v, 1, ff, 10000), Error);
}
