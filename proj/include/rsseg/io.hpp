#ifndef RSSEG_IO_HPP
#define RSSEG_IO_HPP

#include <array>
#include <string>
#include <vector>

#include "rsseg/tensor.hpp"

namespace rsseg::io {

/// Class order follows the loss-weight listing: background, building, car,
/// impervious surface, low vegetation, tree.
enum ClassId : int {
  kBackground = 0,
  kBuilding = 1,
  kCar = 2,
  kImperviousSurface = 3,
  kLowVegetation = 4,
  kTree = 5,
};
constexpr int kNumClasses = 6;

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Bijection between class indices and label colors (ISPRS benchmark palette).
class LabelColorMap {
public:
  LabelColorMap();  // the 6-class land-cover palette
  explicit LabelColorMap(std::vector<Rgb> colors);

  std::size_t classes() const { return colors_.size(); }
  Rgb color(int cls) const;
  /// -1 when the color maps to no class.
  int cls(Rgb color) const;

  static const LabelColorMap& land_cover();

private:
  std::vector<Rgb> colors_;
};

/// 8-bit PNG (gray or RGB) to a channels-first tensor scaled to [0,1].
Tensor load_raster(const std::string& path);
/// Inverse of load_raster; values are clamped to [0,1] and quantized to 8 bit.
void save_raster(const Tensor& t, const std::string& path);

/// Load a raster by extension: .png via the PNG codec, .rt via RT01.
Tensor load_any(const std::string& path);

LabelMap colors_to_labels(const Tensor& rgb, const LabelColorMap& map);
Tensor labels_to_colors(const LabelMap& labels, const LabelColorMap& map);
void save_labels_png(const LabelMap& labels, const LabelColorMap& map,
                     const std::string& path);
LabelMap load_labels_png(const std::string& path, const LabelColorMap& map);

/// (1, K, H, W) with exactly one 1 per pixel.
Tensor one_hot(const LabelMap& labels, int classes);

/// IRRG (3 channels) + nDSM (1 channel) -> (1, 4, H, W).
Tensor stack_inputs(const Tensor& irrg, const Tensor& ndsm);

/// One dataset tile: image path, optional ndsm path ("-" = none), label path,
/// split tag. Tab-separated, one record per line.
struct ManifestEntry {
  std::string image;
  std::string ndsm;  // empty = none
  std::string label;
  std::string split;  // "train" or "test"
};

std::vector<ManifestEntry> load_manifest(const std::string& path);

}  // namespace rsseg::io

#endif
