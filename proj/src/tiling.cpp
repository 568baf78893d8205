#include "rsseg/tiling.hpp"

#include <string>

namespace rsseg::tiling {

void TileScheme::validate() const {
  if (core == 0 || patch != 2 * core)
    throw usage_error("tile scheme: patch must equal 2 * core (got patch=" +
                      std::to_string(patch) + ", core=" + std::to_string(core) + ")");
  if (core % 2 != 0) throw usage_error("tile scheme: core must be even");
}

std::vector<std::size_t> grid_offsets(std::size_t extent, std::size_t size,
                                      std::size_t stride) {
  if (extent < size)
    throw usage_error("patch extraction: image extent " + std::to_string(extent) +
                      " smaller than patch size " + std::to_string(size));
  if (stride == 0) throw usage_error("patch extraction: stride must be positive");
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + size <= extent; o += stride) out.push_back(o);
  if (out.back() != extent - size) out.push_back(extent - size);  // inward shift
  return out;
}

std::vector<TrainingPatch> extract_training_patches(const Tensor& image,
                                                    const LabelMap& labels,
                                                    std::size_t size, std::size_t stride) {
  const Shape4& s = image.shape();
  if (s.n() != 1) throw usage_error("patch extraction: expected batch 1");
  if (labels.h != s.h() || labels.w != s.w())
    throw usage_error("patch extraction: label extent does not match image " + s.str());
  const auto ys = grid_offsets(s.h(), size, stride);
  const auto xs = grid_offsets(s.w(), size, stride);
  std::vector<TrainingPatch> out;
  out.reserve(ys.size() * xs.size());
  for (std::size_t oy : ys) {
    for (std::size_t ox : xs) {
      TrainingPatch p{Tensor(1, s.c(), size, size), LabelMap(size, size), {oy, ox}};
      for (std::size_t c = 0; c < s.c(); ++c)
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x)
            p.image.at(0, c, y, x) = image.at(0, c, oy + y, ox + x);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
          p.label.at(y, x) = labels.at(oy + y, ox + x);
      out.push_back(std::move(p));
    }
  }
  return out;
}

namespace {

// Mirror without edge duplication, folding until in range.
std::size_t reflect_index(long idx, std::size_t extent) {
  if (extent == 1) return 0;
  const long n = static_cast<long>(extent);
  while (idx < 0 || idx >= n) {
    if (idx < 0) idx = -idx;
    if (idx >= n) idx = 2 * (n - 1) - idx;
  }
  return static_cast<std::size_t>(idx);
}

}  // namespace

Tensor reflect_pad(const Tensor& image, std::size_t top, std::size_t bottom,
                   std::size_t left, std::size_t right) {
  const Shape4& s = image.shape();
  Tensor out(s.n(), s.c(), s.h() + top + bottom, s.w() + left + right);
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t y = 0; y < out.shape().h(); ++y) {
        const std::size_t sy = reflect_index(static_cast<long>(y) - static_cast<long>(top),
                                             s.h());
        for (std::size_t x = 0; x < out.shape().w(); ++x) {
          const std::size_t sx =
              reflect_index(static_cast<long>(x) - static_cast<long>(left), s.w());
          out.at(n, c, y, x) = image.at(n, c, sy, sx);
        }
      }
  return out;
}

Tensor tile_predict(const Tensor& image, const PredictFn& predict,
                    const TileScheme& scheme) {
  scheme.validate();
  const Shape4& s = image.shape();
  if (s.n() != 1) throw usage_error("tile_predict: expected batch 1, got " + s.str());
  if (s.h() < 1 || s.w() < 1) throw usage_error("tile_predict: empty image");

  const std::size_t core = scheme.core, patch = scheme.patch, margin = scheme.margin();
  const std::size_t ty_count = (s.h() + core - 1) / core;
  const std::size_t tx_count = (s.w() + core - 1) / core;
  const std::size_t pad_h = margin + ty_count * core + margin;
  const std::size_t pad_w = margin + tx_count * core + margin;
  const Tensor padded =
      reflect_pad(image, margin, pad_h - s.h() - margin, margin, pad_w - s.w() - margin);

  Tensor out;
  for (std::size_t ty = 0; ty < ty_count; ++ty) {
    for (std::size_t tx = 0; tx < tx_count; ++tx) {
      const std::size_t py = ty * core, px = tx * core;
      Tensor window(1, s.c(), patch, patch);
      for (std::size_t c = 0; c < s.c(); ++c)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            window.at(0, c, y, x) = padded.at(0, c, py + y, px + x);
      const Tensor pred = predict(window);
      if (pred.shape().n() != 1 || pred.shape().h() != patch || pred.shape().w() != patch)
        throw usage_error("tile_predict: predict_fn returned " + pred.shape().str() +
                          ", expected (1,K," + std::to_string(patch) + "," +
                          std::to_string(patch) + ")");
      if (out.numel() == 0) out = Tensor(1, pred.shape().c(), s.h(), s.w());
      if (pred.shape().c() != out.shape().c())
        throw usage_error("tile_predict: predict_fn changed channel count");
      // Keep the central core; each output pixel has exactly one owner.
      for (std::size_t c = 0; c < pred.shape().c(); ++c)
        for (std::size_t y = 0; y < core; ++y) {
          const std::size_t gy = ty * core + y;
          if (gy >= s.h()) break;
          for (std::size_t x = 0; x < core; ++x) {
            const std::size_t gx = tx * core + x;
            if (gx >= s.w()) continue;
            out.at(0, c, gy, gx) = pred.at(0, c, margin + y, margin + x);
          }
        }
    }
  }
  return out;
}

}  // namespace rsseg::tiling
