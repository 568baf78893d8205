#ifndef RSSEG_METRICS_HPP
#define RSSEG_METRICS_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rsseg/tensor.hpp"

namespace rsseg::metrics {

/// K x K counts, references along rows, predictions along columns.
class ConfusionMatrix {
public:
  explicit ConfusionMatrix(std::size_t k = 0) : k_(k), counts_(k * k, 0) {}

  std::size_t classes() const { return k_; }
  std::uint64_t& at(std::size_t ref, std::size_t pred) { return counts_[ref * k_ + pred]; }
  std::uint64_t at(std::size_t ref, std::size_t pred) const { return counts_[ref * k_ + pred]; }
  std::uint64_t total() const;
  std::uint64_t trace() const;

  bool operator==(const ConfusionMatrix&) const = default;

private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

/// Ignore mask: pixels with mask != 0 are skipped. Empty mask = keep all.
using IgnoreMask = std::vector<std::uint8_t>;

ConfusionMatrix confusion(const LabelMap& ref, const LabelMap& pred, std::size_t k,
                          const IgnoreMask& ignore = {});

ConfusionMatrix accumulate(const std::vector<ConfusionMatrix>& parts);

struct Prf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Zero-denominator convention: vacuous (1.0) when the class is absent from
/// both reference and prediction, otherwise 0.0.
Prf1 prf1(const ConfusionMatrix& cm, std::size_t cls);

double overall_accuracy(const ConfusionMatrix& cm);

/// Rows scaled to sum 100; zero rows stay zero.
std::vector<std::vector<double>> normalize_rows(const ConfusionMatrix& cm);

/// Marks every pixel within Chebyshev distance `radius` of a class boundary
/// (a pixel with a differing 8-neighbor).
IgnoreMask erode_boundaries(const LabelMap& labels, std::size_t radius);

/// Aligned text table of per-class F1 and overall accuracy. `class_names`
/// indexes all K classes; `report_classes` selects the columns.
std::string report_table(const ConfusionMatrix& cm,
                         const std::vector<std::string>& class_names,
                         const std::vector<std::size_t>& report_classes);
std::string report_csv(const ConfusionMatrix& cm,
                       const std::vector<std::string>& class_names,
                       const std::vector<std::size_t>& report_classes);
std::string normalized_matrix_table(const ConfusionMatrix& cm,
                                    const std::vector<std::string>& class_names,
                                    const std::vector<std::size_t>& report_classes);

}  // namespace rsseg::metrics

#endif
