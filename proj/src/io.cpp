#include "rsseg/io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "rsseg/config.hpp"

namespace rsseg::io {

LabelColorMap::LabelColorMap()
    : colors_{{255, 0, 0},      // background
              {0, 0, 255},      // building
              {255, 255, 0},    // car
              {255, 255, 255},  // impervious surface
              {0, 255, 255},    // low vegetation
              {0, 255, 0}} {}   // tree

LabelColorMap::LabelColorMap(std::vector<Rgb> colors) : colors_(std::move(colors)) {
  for (std::size_t i = 0; i < colors_.size(); ++i)
    for (std::size_t j = i + 1; j < colors_.size(); ++j)
      if (colors_[i] == colors_[j])
        throw usage_error("label color map: duplicate color for classes " +
                          std::to_string(i) + " and " + std::to_string(j));
}

Rgb LabelColorMap::color(int cls) const {
  if (cls < 0 || static_cast<std::size_t>(cls) >= colors_.size())
    throw usage_error("label color map: class " + std::to_string(cls) + " out of range");
  return colors_[static_cast<std::size_t>(cls)];
}

int LabelColorMap::cls(Rgb color) const {
  for (std::size_t i = 0; i < colors_.size(); ++i)
    if (colors_[i] == color) return static_cast<int>(i);
  return -1;
}

const LabelColorMap& LabelColorMap::land_cover() {
  static const LabelColorMap map;
  return map;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Tensor load_raster(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw data_error("cannot open: " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0)
    throw data_error("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw data_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw data_error("corrupt PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw data_error("unsupported bit depth " + std::to_string(depth) + " (want 8): " + path);
  }
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw data_error("unsupported channel count " + std::to_string(channels) + ": " + path);
  }

  std::vector<png_byte> row(static_cast<std::size_t>(w) * channels);
  Tensor t(1, static_cast<std::size_t>(channels), h, w);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        t.at(0, c, y, x) = row[x * channels + c] / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return t;
}

void save_raster(const Tensor& t, const std::string& path) {
  const Shape4& s = t.shape();
  if (s.n() != 1 || (s.c() != 1 && s.c() != 3))
    throw usage_error("save_raster: expected (1,1,H,W) or (1,3,H,W), got " + s.str());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw data_error("cannot open for write: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw data_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw data_error("PNG write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(s.w()), static_cast<png_uint_32>(s.h()),
               8, s.c() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(s.w() * s.c());
  for (std::size_t y = 0; y < s.h(); ++y) {
    for (std::size_t x = 0; x < s.w(); ++x)
      for (std::size_t c = 0; c < s.c(); ++c) {
        double v = t.at(0, c, y, x);
        v = v < 0 ? 0 : (v > 1 ? 1 : v);
        row[x * s.c() + c] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor load_any(const std::string& path) {
  if (path.size() >= 3 && path.substr(path.size() - 3) == ".rt") return load_rt01(path);
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".png") return load_raster(path);
  throw data_error("unsupported raster format (want .png or .rt): " + path);
}

LabelMap colors_to_labels(const Tensor& rgb, const LabelColorMap& map) {
  const Shape4& s = rgb.shape();
  if (s.n() != 1 || s.c() != 3)
    throw usage_error("colors_to_labels: expected (1,3,H,W), got " + s.str());
  LabelMap out(s.h(), s.w());
  for (std::size_t y = 0; y < s.h(); ++y)
    for (std::size_t x = 0; x < s.w(); ++x) {
      const Rgb c{static_cast<std::uint8_t>(std::lround(rgb.at(0, 0, y, x) * 255.0)),
                  static_cast<std::uint8_t>(std::lround(rgb.at(0, 1, y, x) * 255.0)),
                  static_cast<std::uint8_t>(std::lround(rgb.at(0, 2, y, x) * 255.0))};
      const int cls = map.cls(c);
      if (cls < 0)
        throw data_error("colors_to_labels: unknown color (" + std::to_string(c.r) + "," +
                         std::to_string(c.g) + "," + std::to_string(c.b) + ") at pixel (" +
                         std::to_string(y) + "," + std::to_string(x) + ")");
      out.at(y, x) = cls;
    }
  return out;
}

Tensor labels_to_colors(const LabelMap& labels, const LabelColorMap& map) {
  Tensor out(1, 3, labels.h, labels.w);
  for (std::size_t y = 0; y < labels.h; ++y)
    for (std::size_t x = 0; x < labels.w; ++x) {
      const Rgb c = map.color(labels.at(y, x));
      out.at(0, 0, y, x) = c.r / 255.0;
      out.at(0, 1, y, x) = c.g / 255.0;
      out.at(0, 2, y, x) = c.b / 255.0;
    }
  return out;
}

void save_labels_png(const LabelMap& labels, const LabelColorMap& map,
                     const std::string& path) {
  save_raster(labels_to_colors(labels, map), path);
}

LabelMap load_labels_png(const std::string& path, const LabelColorMap& map) {
  return colors_to_labels(load_raster(path), map);
}

Tensor one_hot(const LabelMap& labels, int classes) {
  Tensor out(1, static_cast<std::size_t>(classes), labels.h, labels.w);
  const std::size_t plane = labels.h * labels.w;
  for (std::size_t i = 0; i < plane; ++i) {
    const int cls = labels.v[i];
    if (cls < 0 || cls >= classes)
      throw usage_error("one_hot: label " + std::to_string(cls) + " out of range [0," +
                        std::to_string(classes) + ")");
    out[static_cast<std::size_t>(cls) * plane + i] = 1.0;
  }
  return out;
}

Tensor stack_inputs(const Tensor& irrg, const Tensor& ndsm) {
  const Shape4& a = irrg.shape();
  const Shape4& b = ndsm.shape();
  if (a.c() != 3 || b.c() != 1)
    throw usage_error("stack_inputs: expected 3-channel image and 1-channel ndsm, got " +
                      a.str() + " and " + b.str());
  return concat_channels(irrg, ndsm);
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot open manifest: " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 4)
      throw data_error("manifest line " + std::to_string(lineno) +
                       ": expected 4 tab-separated fields (image, ndsm, label, split)");
    ManifestEntry e{fields[0], fields[1] == "-" ? "" : fields[1], fields[2], fields[3]};
    if (e.split != "train" && e.split != "test")
      throw data_error("manifest line " + std::to_string(lineno) +
                       ": split must be train or test");
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace rsseg::io
