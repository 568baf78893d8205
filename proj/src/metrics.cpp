#include "rsseg/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace rsseg::metrics {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (std::size_t r = 0; r < k_; ++r)
    for (std::size_t c = 0; c < k_; ++c) t += at(r, c);
  return t;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < k_; ++i) t += at(i, i);
  return t;
}

ConfusionMatrix confusion(const LabelMap& ref, const LabelMap& pred, std::size_t k,
                          const IgnoreMask& ignore) {
  if (ref.h != pred.h || ref.w != pred.w)
    throw usage_error("confusion: reference and prediction extents differ");
  if (!ignore.empty() && ignore.size() != ref.size())
    throw usage_error("confusion: ignore mask size mismatch");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (!ignore.empty() && ignore[i]) continue;
    const int r = ref.v[i], p = pred.v[i];
    if (r < 0 || p < 0 || static_cast<std::size_t>(r) >= k ||
        static_cast<std::size_t>(p) >= k)
      throw usage_error("confusion: label out of range [0," + std::to_string(k) + ")");
    ++cm.at(static_cast<std::size_t>(r), static_cast<std::size_t>(p));
  }
  return cm;
}

ConfusionMatrix accumulate(const std::vector<ConfusionMatrix>& parts) {
  if (parts.empty()) throw usage_error("accumulate: empty list");
  ConfusionMatrix out(parts.front().classes());
  for (const auto& p : parts) {
    if (p.classes() != out.classes())
      throw usage_error("accumulate: class count mismatch (" +
                        std::to_string(p.classes()) + " vs " +
                        std::to_string(out.classes()) + ")");
    for (std::size_t r = 0; r < out.classes(); ++r)
      for (std::size_t c = 0; c < out.classes(); ++c) out.at(r, c) += p.at(r, c);
  }
  return out;
}

Prf1 prf1(const ConfusionMatrix& cm, std::size_t cls) {
  const std::size_t k = cm.classes();
  if (cls >= k) throw usage_error("prf1: class out of range");
  const std::uint64_t tp = cm.at(cls, cls);
  std::uint64_t fp = 0, fn = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (i == cls) continue;
    fp += cm.at(i, cls);  // column sum, off-diagonal
    fn += cm.at(cls, i);  // row sum, off-diagonal
  }
  const bool absent = tp + fp + fn == 0;
  Prf1 r;
  r.precision = tp + fp == 0 ? (absent ? 1.0 : 0.0)
                             : static_cast<double>(tp) / static_cast<double>(tp + fp);
  r.recall = tp + fn == 0 ? (absent ? 1.0 : 0.0)
                          : static_cast<double>(tp) / static_cast<double>(tp + fn);
  r.f1 = r.precision + r.recall == 0.0
             ? (absent ? 1.0 : 0.0)
             : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  return total == 0 ? 0.0 : static_cast<double>(cm.trace()) / static_cast<double>(total);
}

std::vector<std::vector<double>> normalize_rows(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  std::vector<std::vector<double>> out(k, std::vector<double>(k, 0.0));
  for (std::size_t r = 0; r < k; ++r) {
    std::uint64_t row = 0;
    for (std::size_t c = 0; c < k; ++c) row += cm.at(r, c);
    if (row == 0) continue;
    for (std::size_t c = 0; c < k; ++c)
      out[r][c] = 100.0 * static_cast<double>(cm.at(r, c)) / static_cast<double>(row);
  }
  return out;
}

IgnoreMask erode_boundaries(const LabelMap& labels, std::size_t radius) {
  IgnoreMask mask(labels.size(), 0);
  if (radius == 0) return mask;
  // Boundary pixels: any pixel with a differing 8-neighbor.
  IgnoreMask boundary(labels.size(), 0);
  const long h = static_cast<long>(labels.h), w = static_cast<long>(labels.w);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const int v = labels.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      for (long dy = -1; dy <= 1 && !boundary[y * w + x]; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w || (dy == 0 && dx == 0)) continue;
          if (labels.at(static_cast<std::size_t>(ny), static_cast<std::size_t>(nx)) != v) {
            boundary[y * w + x] = 1;
            break;
          }
        }
    }
  const long r = static_cast<long>(radius);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      if (!boundary[y * w + x]) continue;
      // The boundary pixel sits next to the class edge; everything within
      // Chebyshev distance radius-1 of it is within radius of the edge.
      for (long dy = -(r - 1); dy <= r - 1; ++dy)
        for (long dx = -(r - 1); dx <= r - 1; ++dx) {
          const long ny = y + dy, nx = x + dx;
          if (ny >= 0 && ny < h && nx >= 0 && nx < w) mask[ny * w + nx] = 1;
        }
    }
  return mask;
}

std::string report_table(const ConfusionMatrix& cm,
                         const std::vector<std::string>& class_names,
                         const std::vector<std::size_t>& report_classes) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(20) << "Class" << std::right << std::setw(10) << "Precision"
     << std::setw(10) << "Recall" << std::setw(10) << "F1" << "\n";
  for (std::size_t c : report_classes) {
    const Prf1 m = prf1(cm, c);
    os << std::left << std::setw(20) << class_names.at(c) << std::right << std::setw(10)
       << 100.0 * m.precision << std::setw(10) << 100.0 * m.recall << std::setw(10)
       << 100.0 * m.f1 << "\n";
  }
  os << std::left << std::setw(20) << "Overall accuracy" << std::right << std::setw(30)
     << 100.0 * overall_accuracy(cm) << "\n";
  return os.str();
}

std::string report_csv(const ConfusionMatrix& cm,
                       const std::vector<std::string>& class_names,
                       const std::vector<std::size_t>& report_classes) {
  std::ostringstream os;
  os << "class,precision,recall,f1\n";
  for (std::size_t c : report_classes) {
    const Prf1 m = prf1(cm, c);
    os << class_names.at(c) << "," << m.precision << "," << m.recall << "," << m.f1 << "\n";
  }
  os << "overall_accuracy," << overall_accuracy(cm) << ",,\n";
  return os.str();
}

std::string normalized_matrix_table(const ConfusionMatrix& cm,
                                    const std::vector<std::string>& class_names,
                                    const std::vector<std::size_t>& report_classes) {
  const auto norm = normalize_rows(cm);
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(20) << "ref \\ pred";
  for (std::size_t c : report_classes) os << std::right << std::setw(12) << class_names.at(c);
  os << "\n";
  for (std::size_t r : report_classes) {
    os << std::left << std::setw(20) << class_names.at(r);
    for (std::size_t c : report_classes) os << std::right << std::setw(12) << norm[r][c];
    os << "\n";
  }
  return os.str();
}

}  // namespace rsseg::metrics
