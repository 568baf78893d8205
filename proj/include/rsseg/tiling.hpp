#ifndef RSSEG_TILING_HPP
#define RSSEG_TILING_HPP

#include <functional>
#include <vector>

#include "rsseg/tensor.hpp"

namespace rsseg::tiling {

/// Overlapped prediction geometry: patches of `patch` pixels at stride
/// `core`, keeping only the central `core` crop of each prediction.
/// patch = 2 * core is enforced.
struct TileScheme {
  std::size_t patch = 256;
  std::size_t core = 128;

  std::size_t margin() const { return core / 2; }
  void validate() const;
};

struct PatchCoords {
  std::size_t y = 0;
  std::size_t x = 0;
};

struct TrainingPatch {
  Tensor image;    // (1, C, size, size)
  LabelMap label;
  PatchCoords origin;
};

/// Aligned image/label patches on a regular grid; the last row/column shifts
/// inward so every patch stays in bounds.
std::vector<TrainingPatch> extract_training_patches(const Tensor& image,
                                                    const LabelMap& labels,
                                                    std::size_t size, std::size_t stride);

/// The grid offsets used by extract_training_patches, exposed for tests.
std::vector<std::size_t> grid_offsets(std::size_t extent, std::size_t size,
                                      std::size_t stride);

using PredictFn = std::function<Tensor(const Tensor&)>;

/// Reflect-pad the image, predict overlapping patch x patch windows, keep
/// each prediction's central core x core crop, and stitch. Every output pixel
/// is written exactly once; output extent equals input extent.
Tensor tile_predict(const Tensor& image, const PredictFn& predict, const TileScheme& scheme);

/// Reflect padding (edge pixels not repeated), exposed for tests.
Tensor reflect_pad(const Tensor& image, std::size_t top, std::size_t bottom,
                   std::size_t left, std::size_t right);

}  // namespace rsseg::tiling

#endif
