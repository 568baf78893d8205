#include <fstream>
#include <random>

#include "doctest.h"
#include "rsseg/io.hpp"

using namespace rsseg;
using namespace rsseg::io;

TEST_CASE("land-cover palette matches the benchmark colors and is a bijection") {
  const LabelColorMap& m = LabelColorMap::land_cover();
  REQUIRE(m.classes() == 6);
  CHECK(m.color(kBackground) == Rgb{255, 0, 0});
  CHECK(m.color(kBuilding) == Rgb{0, 0, 255});
  CHECK(m.color(kCar) == Rgb{255, 255, 0});
  CHECK(m.color(kImperviousSurface) == Rgb{255, 255, 255});
  CHECK(m.color(kLowVegetation) == Rgb{0, 255, 255});
  CHECK(m.color(kTree) == Rgb{0, 255, 0});
  for (int c = 0; c < 6; ++c) CHECK(m.cls(m.color(c)) == c);
  CHECK(m.cls(Rgb{1, 2, 3}) == -1);
  CHECK_THROWS_AS(LabelColorMap({Rgb{0, 0, 0}, Rgb{0, 0, 0}}), Error);
}

TEST_CASE("png round trip: rgb") {
  Tensor t(1, 3, 5, 7);
  std::mt19937_64 rng(1);
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<double>(rng() % 256) / 255.0;  // exactly representable
  save_raster(t, "io_rgb.png");
  Tensor back = load_raster("io_rgb.png");
  REQUIRE(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i)
    CHECK(back[i] == doctest::Approx(t[i]).epsilon(1e-9));
}

TEST_CASE("png round trip: grayscale") {
  Tensor t(1, 1, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) t[i] = static_cast<double>(i * 17) / 255.0;
  save_raster(t, "io_gray.png");
  Tensor back = load_raster("io_gray.png");
  REQUIRE(back.shape() == t.shape());
  for (std::size_t i = 0; i < 16; ++i) CHECK(back[i] == doctest::Approx(t[i]));
}

TEST_CASE("save_raster clamps out-of-range values") {
  Tensor t(1, 1, 1, 2);
  t[0] = -0.5;
  t[1] = 1.5;
  save_raster(t, "io_clamp.png");
  Tensor back = load_raster("io_clamp.png");
  CHECK(back[0] == 0.0);
  CHECK(back[1] == 1.0);
}

TEST_CASE("load_raster errors on missing file") {
  CHECK_THROWS_AS(load_raster("missing_file.png"), Error);
}

TEST_CASE("load_any dispatches on extension") {
  Tensor t(1, 2, 3, 3, 0.25);
  save_rt01("io_any.rt", t);
  CHECK(load_any("io_any.rt") == t);
  CHECK_THROWS_AS(load_any("file.bmp"), Error);
}

TEST_CASE("label png round trip") {
  LabelMap l(3, 4);
  for (std::size_t i = 0; i < 12; ++i) l.v[i] = static_cast<int>(i % 6);
  save_labels_png(l, LabelColorMap::land_cover(), "io_labels.png");
  CHECK(load_labels_png("io_labels.png", LabelColorMap::land_cover()) == l);
}

TEST_CASE("colors_to_labels rejects colors outside the palette") {
  Tensor rgb(1, 3, 1, 1);
  rgb.at(0, 0, 0, 0) = 10.0 / 255.0;
  CHECK_THROWS_AS(colors_to_labels(rgb, LabelColorMap::land_cover()), Error);
}

TEST_CASE("one_hot puts exactly one 1 per pixel") {
  LabelMap l(2, 2);
  l.v = {0, 2, 1, 2};
  Tensor oh = one_hot(l, 3);
  REQUIRE(oh.shape() == Shape4(1, 3, 2, 2));
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += oh[c * 4 + i];
    CHECK(s == 1.0);
    CHECK(oh[static_cast<std::size_t>(l.v[i]) * 4 + i] == 1.0);
  }
  LabelMap bad(1, 1, 7);
  CHECK_THROWS_AS(one_hot(bad, 3), Error);
}

TEST_CASE("stack_inputs appends the height channel") {
  Tensor irrg(1, 3, 2, 2, 0.5);
  Tensor ndsm(1, 1, 2, 2, 0.9);
  Tensor x = stack_inputs(irrg, ndsm);
  REQUIRE(x.shape() == Shape4(1, 4, 2, 2));
  CHECK(x.at(0, 3, 0, 0) == 0.9);
  CHECK(x.at(0, 0, 0, 0) == 0.5);
  CHECK_THROWS_AS(stack_inputs(irrg, Tensor(1, 1, 3, 2, 0.0)), Error);
}

TEST_CASE("manifest: tab-separated records, '-' marks a missing ndsm") {
  {
    std::ofstream os("io_manifest.tsv");
    os << "# comment line\n";
    os << "a.png\tb.png\tc.png\ttrain\n";
    os << "d.png\t-\te.png\ttest\n";
  }
  auto entries = load_manifest("io_manifest.tsv");
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].image == "a.png");
  CHECK(entries[0].ndsm == "b.png");
  CHECK(entries[0].label == "c.png");
  CHECK(entries[0].split == "train");
  CHECK(entries[1].ndsm.empty());
  CHECK(entries[1].split == "test");

  {
    std::ofstream os("io_manifest_bad.tsv");
    os << "a.png\tb.png\tc.png\tvalidation\n";
  }
  CHECK_THROWS_AS(load_manifest("io_manifest_bad.tsv"), Error);
  CHECK_THROWS_AS(load_manifest("io_manifest_missing.tsv"), Error);
}
