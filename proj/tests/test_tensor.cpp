#include <limits>
#include <sstream>

#include "doctest.h"
#include "rsseg/tensor.hpp"

using namespace rsseg;

TEST_CASE("shape accessors and numel") {
  Shape4 s(2, 3, 4, 5);
  CHECK(s.n() == 2);
  CHECK(s.c() == 3);
  CHECK(s.h() == 4);
  CHECK(s.w() == 5);
  CHECK(s.numel() == 120);
}

TEST_CASE("tensor indexing is row-major (n, c, h, w)") {
  Tensor t(2, 3, 4, 5);
  t.at(1, 2, 3, 4) = 7.5;
  CHECK(t[((1 * 3 + 2) * 4 + 3) * 5 + 4] == 7.5);
}

TEST_CASE("elementwise ops") {
  Tensor a(1, 1, 1, 3), b(1, 1, 1, 3);
  a[0] = 1; a[1] = -2; a[2] = 3;
  b[0] = 4; b[1] = 5; b[2] = -6;
  CHECK(add(a, b)[1] == 3.0);
  CHECK(sub(a, b)[2] == 9.0);
  CHECK(mul(a, b)[0] == 4.0);
  CHECK(elem_max(a, b)[2] == 3.0);
  CHECK(add(a, 1.0)[1] == -1.0);
  CHECK(elem_max(a, 0.0)[1] == 0.0);
  Tensor c = a;
  add_inplace(c, b);
  CHECK(c == add(a, b));
  Tensor bad(1, 1, 1, 2);
  CHECK_THROWS_AS(add(a, bad), Error);
}

TEST_CASE("argmax breaks ties toward the lowest class index") {
  Tensor t(1, 3, 1, 2);
  // pixel 0: channels (0.2, 0.5, 0.5) -> 1; pixel 1: all equal -> 0
  t.at(0, 0, 0, 0) = 0.2; t.at(0, 1, 0, 0) = 0.5; t.at(0, 2, 0, 0) = 0.5;
  t.at(0, 0, 0, 1) = 0.4; t.at(0, 1, 0, 1) = 0.4; t.at(0, 2, 0, 1) = 0.4;
  LabelMap l = argmax_channels(t);
  CHECK(l.at(0, 0) == 1);
  CHECK(l.at(0, 1) == 0);
}

TEST_CASE("concat and slice channels round trip") {
  std::mt19937_64 rng(1);
  Tensor a = Tensor::randn(Shape4(2, 3, 4, 5), rng);
  Tensor b = Tensor::randn(Shape4(2, 2, 4, 5), rng);
  Tensor c = concat_channels(a, b);
  CHECK(c.shape() == Shape4(2, 5, 4, 5));
  CHECK(slice_channels(c, 0, 3) == a);
  CHECK(slice_channels(c, 3, 5) == b);
  Tensor mismatched(2, 2, 4, 4);
  CHECK_THROWS_AS(concat_channels(a, mismatched), Error);
}

TEST_CASE("rt01 f64 round trip is exact") {
  std::mt19937_64 rng(2);
  Tensor t = Tensor::randn(Shape4(2, 3, 5, 7), rng);
  std::stringstream ss;
  write_rt01(ss, t, Rt01Dtype::F64);
  CHECK(read_rt01(ss) == t);
}

TEST_CASE("rt01 f32 round trip is float-accurate") {
  std::mt19937_64 rng(3);
  Tensor t = Tensor::randn(Shape4(1, 2, 3, 4), rng);
  std::stringstream ss;
  write_rt01(ss, t, Rt01Dtype::F32);
  Tensor back = read_rt01(ss);
  for (std::size_t i = 0; i < t.numel(); ++i)
    CHECK(back[i] == doctest::Approx(t[i]).epsilon(1e-6));
}

TEST_CASE("rt01 header layout: magic, dtype tag, reserved, extents") {
  Tensor t(1, 1, 1, 2);
  t[0] = 0.0; t[1] = 1.0;
  auto bytes = serialize(t, Rt01Dtype::F64);
  REQUIRE(bytes.size() == 4 + 4 + 32 + 2 * 8);
  CHECK(bytes[0] == 'R');
  CHECK(bytes[1] == 'T');
  CHECK(bytes[2] == '0');
  CHECK(bytes[3] == '1');
  CHECK(bytes[4] == 2);  // f64 tag
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 0);
  CHECK(bytes[7] == 0);
  // little-endian extents 1,1,1,2
  CHECK(bytes[8] == 1);
  CHECK(bytes[16] == 1);
  CHECK(bytes[24] == 1);
  CHECK(bytes[32] == 2);
  CHECK(bytes[33] == 0);
  CHECK(deserialize(bytes) == t);
}

TEST_CASE("rt01 rejects bad magic and truncation") {
  Tensor t(1, 1, 2, 2, 1.0);
  auto bytes = serialize(t);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize(bad), Error);
  auto cut = bytes;
  cut.resize(bytes.size() - 5);
  CHECK_THROWS_AS(deserialize(cut), Error);
  auto tag = bytes;
  tag[4] = 9;
  CHECK_THROWS_AS(deserialize(tag), Error);
}

TEST_CASE("rt01 file save and load") {
  std::mt19937_64 rng(4);
  Tensor t = Tensor::rand_uniform(Shape4(1, 6, 8, 9), rng);
  const std::string path = "tensor_roundtrip.rt";
  save_rt01(path, t);
  CHECK(load_rt01(path) == t);
  CHECK_THROWS_AS(load_rt01("does_not_exist.rt"), Error);
}

TEST_CASE("all_finite") {
  Tensor t(1, 1, 1, 3, 1.0);
  CHECK(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("randn is seeded deterministically") {
  std::mt19937_64 a(5), b(5);
  CHECK(Tensor::randn(Shape4(1, 2, 3, 4), a) == Tensor::randn(Shape4(1, 2, 3, 4), b));
}
