#include <random>

#include "doctest.h"
#include "rsseg/metrics.hpp"

using namespace rsseg;
using namespace rsseg::metrics;

namespace {

ConfusionMatrix hand_matrix() {
  // rows = reference, cols = prediction
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 3;
  cm.at(0, 1) = 1;
  cm.at(1, 0) = 2;
  cm.at(1, 1) = 4;
  return cm;
}

}  // namespace

TEST_CASE("hand confusion matrix: precision, recall, F1, OA") {
  const ConfusionMatrix cm = hand_matrix();
  const Prf1 c0 = prf1(cm, 0);
  CHECK(std::abs(c0.precision - 0.6) < 1e-12);   // 3 / (3 + 2)
  CHECK(std::abs(c0.recall - 0.75) < 1e-12);     // 3 / (3 + 1)
  CHECK(std::abs(c0.f1 - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(overall_accuracy(cm) - 0.7) < 1e-12);
  CHECK(cm.total() == 10);
  CHECK(cm.trace() == 7);
}

TEST_CASE("normalized rows sum to 100") {
  const auto norm = normalize_rows(hand_matrix());
  for (const auto& row : norm) {
    double s = 0.0;
    for (double v : row) s += v;
    CHECK(std::abs(s - 100.0) < 1e-12);
  }
  CHECK(std::abs(norm[0][0] - 75.0) < 1e-12);

  ConfusionMatrix sparse(3);
  sparse.at(0, 0) = 5;  // rows 1 and 2 empty
  const auto n2 = normalize_rows(sparse);
  CHECK(n2[1][1] == 0.0);
  CHECK(n2[2][0] == 0.0);
}

TEST_CASE("F1 equals Dice for binary masks") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 50;
    LabelMap ref(1, n), pred(1, n);
    for (std::size_t i = 0; i < n; ++i) {
      ref.v[i] = static_cast<int>(rng() % 2);
      pred.v[i] = static_cast<int>(rng() % 2);
    }
    const ConfusionMatrix cm = confusion(ref, pred, 2);
    std::size_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < n; ++i) {
      a += ref.v[i] == 1;
      b += pred.v[i] == 1;
      inter += ref.v[i] == 1 && pred.v[i] == 1;
    }
    const Prf1 m = prf1(cm, 1);
    if (a + b == 0) {
      CHECK(m.f1 == 1.0);  // vacuous: class absent everywhere
    } else {
      const double dice = 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
      CHECK(std::abs(m.f1 - dice) < 1e-12);
    }
  }
}

TEST_CASE("zero-denominator conventions") {
  ConfusionMatrix cm(3);
  cm.at(0, 0) = 4;
  cm.at(0, 1) = 1;
  // class 2 absent from both reference and prediction: vacuous 1.0
  const Prf1 absent = prf1(cm, 2);
  CHECK(absent.precision == 1.0);
  CHECK(absent.recall == 1.0);
  CHECK(absent.f1 == 1.0);
  // class 1 predicted but never present: recall denominator 0, not vacuous
  const Prf1 spurious = prf1(cm, 1);
  CHECK(spurious.precision == 0.0);
  CHECK(spurious.recall == 0.0);
  CHECK(spurious.f1 == 0.0);
}

TEST_CASE("confusion rejects mismatched extents and out-of-range labels") {
  LabelMap a(2, 2, 0), b(2, 3, 0);
  CHECK_THROWS_AS(confusion(a, b, 2), Error);
  LabelMap c(2, 2, 5);
  CHECK_THROWS_AS(confusion(a, c, 2), Error);
}

TEST_CASE("ignore mask drops pixels from the counts") {
  LabelMap ref(1, 4, 0), pred(1, 4, 0);
  ref.v = {0, 0, 1, 1};
  pred.v = {0, 1, 1, 0};
  IgnoreMask mask = {0, 1, 0, 1};
  const ConfusionMatrix cm = confusion(ref, pred, 2, mask);
  CHECK(cm.total() == 2);
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(1, 1) == 1);
}

TEST_CASE("accumulate sums partial matrices") {
  const ConfusionMatrix cm = hand_matrix();
  const ConfusionMatrix sum = accumulate({cm, cm, cm});
  CHECK(sum.at(0, 0) == 9);
  CHECK(sum.total() == 30);
  CHECK_THROWS_AS(accumulate({}), Error);
  CHECK_THROWS_AS(accumulate({cm, ConfusionMatrix(3)}), Error);
}

TEST_CASE("erode_boundaries: radius 0 ignores nothing, radius 1 marks edges") {
  LabelMap l(4, 4, 0);
  for (std::size_t y = 0; y < 4; ++y) l.at(y, 2) = l.at(y, 3) = 1;

  CHECK(erode_boundaries(l, 0) == IgnoreMask(16, 0));

  const IgnoreMask r1 = erode_boundaries(l, 1);
  for (std::size_t y = 0; y < 4; ++y) {
    CHECK(r1[y * 4 + 0] == 0);
    CHECK(r1[y * 4 + 1] == 1);  // touches the class edge
    CHECK(r1[y * 4 + 2] == 1);
    CHECK(r1[y * 4 + 3] == 0);
  }

  // Radius 2 additionally covers the neighbors of boundary pixels.
  const IgnoreMask r2 = erode_boundaries(l, 2);
  for (std::size_t i = 0; i < 16; ++i) CHECK(r2[i] == 1);

  LabelMap uniform(3, 3, 2);
  CHECK(erode_boundaries(uniform, 3) == IgnoreMask(9, 0));
}

TEST_CASE("report tables include every requested class and the overall accuracy") {
  ConfusionMatrix cm(3);
  cm.at(0, 0) = 5;
  cm.at(1, 1) = 3;
  cm.at(2, 1) = 1;
  const std::vector<std::string> names = {"alpha", "beta", "gamma"};
  const std::vector<std::size_t> report = {1, 2};
  const std::string table = report_table(cm, names, report);
  CHECK(table.find("beta") != std::string::npos);
  CHECK(table.find("gamma") != std::string::npos);
  CHECK(table.find("alpha") == std::string::npos);
  CHECK(table.find("Overall accuracy") != std::string::npos);

  const std::string csv = report_csv(cm, names, report);
  CHECK(csv.find("class,precision,recall,f1") == 0);
  CHECK(csv.find("overall_accuracy") != std::string::npos);

  const std::string norm = normalized_matrix_table(cm, names, report);
  CHECK(norm.find("beta") != std::string::npos);
}
