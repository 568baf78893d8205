#include "rsseg/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace rsseg {

std::string Shape4::str() const {
  std::ostringstream os;
  os << "(" << e[0] << "," << e[1] << "," << e[2] << "," << e[3] << ")";
  return os.str();
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::randn(Shape4 shape, std::mt19937_64& rng, double stddev) {
  Tensor t(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.vec()) v = dist(rng);
  return t;
}

Tensor Tensor::rand_uniform(Shape4 shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.vec()) v = dist(rng);
  return t;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw usage_error(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                      b.shape().str());
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <typename F>
Tensor map_scalar(const Tensor& a, double s, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], s);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}
Tensor elem_max(const Tensor& a, const Tensor& b) {
  return zip(a, b, "max", [](double x, double y) { return x > y ? x : y; });
}
Tensor add(const Tensor& a, double s) {
  return map_scalar(a, s, [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, double s) {
  return map_scalar(a, s, [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, double s) {
  return map_scalar(a, s, [](double x, double y) { return x * y; });
}
Tensor elem_max(const Tensor& a, double s) {
  return map_scalar(a, s, [](double x, double y) { return x > y ? x : y; });
}

void add_inplace(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add_inplace");
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] += b[i];
}

LabelMap argmax_channels(const Tensor& t, std::size_t n) {
  const Shape4& s = t.shape();
  if (n >= s.n()) throw usage_error("argmax_channels: batch index out of range");
  LabelMap out(s.h(), s.w());
  const std::size_t plane = s.h() * s.w();
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    double bv = t.data()[(n * s.c() + 0) * plane + i];
    for (std::size_t c = 1; c < s.c(); ++c) {
      const double v = t.data()[(n * s.c() + c) * plane + i];
      if (v > bv) {
        bv = v;
        best = static_cast<int>(c);
      }
    }
    out.v[i] = best;
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape4& sa = a.shape();
  const Shape4& sb = b.shape();
  if (sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w())
    throw usage_error("concat_channels: batch/spatial mismatch " + sa.str() + " vs " +
                      sb.str());
  Tensor out(sa.n(), sa.c() + sb.c(), sa.h(), sa.w());
  const std::size_t plane = sa.h() * sa.w();
  for (std::size_t n = 0; n < sa.n(); ++n) {
    double* dst = out.data() + n * out.shape().c() * plane;
    std::memcpy(dst, a.data() + n * sa.c() * plane, sa.c() * plane * sizeof(double));
    std::memcpy(dst + sa.c() * plane, b.data() + n * sb.c() * plane,
                sb.c() * plane * sizeof(double));
  }
  return out;
}

Tensor slice_channels(const Tensor& x, std::size_t c0, std::size_t c1) {
  const Shape4& s = x.shape();
  if (c1 < c0 || c1 > s.c())
    throw usage_error("slice_channels: bad range [" + std::to_string(c0) + "," +
                      std::to_string(c1) + ") for C=" + std::to_string(s.c()));
  Tensor out(s.n(), c1 - c0, s.h(), s.w());
  const std::size_t plane = s.h() * s.w();
  for (std::size_t n = 0; n < s.n(); ++n)
    std::memcpy(out.data() + n * out.shape().c() * plane,
                x.data() + (n * s.c() + c0) * plane,
                (c1 - c0) * plane * sizeof(double));
  return out;
}

namespace {

constexpr char kMagic[4] = {'R', 'T', '0', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw data_error("RT01: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_rt01(std::ostream& os, const Tensor& t, Rt01Dtype dtype) {
  os.write(kMagic, 4);
  char tag = static_cast<char>(dtype);
  os.put(tag);
  os.put(0);
  os.put(0);
  os.put(0);
  for (int i = 0; i < 4; ++i) put_u64(os, t.shape().e[i]);
  if (dtype == Rt01Dtype::F64) {
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  } else {
    std::vector<float> buf(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) buf[i] = static_cast<float>(t[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!os) throw data_error("RT01: write failed");
}

Tensor read_rt01(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw data_error("RT01: bad magic");
  char hdr[4];
  is.read(hdr, 4);
  if (!is) throw data_error("RT01: truncated header");
  const auto tag = static_cast<std::uint8_t>(hdr[0]);
  if (tag != 1 && tag != 2)
    throw data_error("RT01: unknown dtype tag " + std::to_string(tag));
  std::uint64_t ext[4];
  for (auto& e : ext) e = get_u64(is);
  // Guard against extent products overflowing size_t.
  std::uint64_t numel = 1;
  for (auto e : ext) {
    if (e != 0 && numel > std::numeric_limits<std::uint64_t>::max() / e)
      throw data_error("RT01: extent overflow");
    numel *= e;
  }
  const std::size_t elem = tag == 1 ? sizeof(float) : sizeof(double);
  if (numel > (std::uint64_t(1) << 40) / elem) throw data_error("RT01: extent overflow");
  Tensor t(Shape4(ext[0], ext[1], ext[2], ext[3]));
  if (tag == 2) {
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
  } else {
    std::vector<float> buf(numel);
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(numel * sizeof(float)));
    for (std::size_t i = 0; i < numel; ++i) t[i] = buf[i];
  }
  if (static_cast<std::uint64_t>(is.gcount()) != numel * elem)
    throw data_error("RT01: truncated payload");
  return t;
}

void save_rt01(const std::string& path, const Tensor& t, Rt01Dtype dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot open for write: " + path);
  write_rt01(os, t, dtype);
}

Tensor load_rt01(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open: " + path);
  return read_rt01(is);
}

std::vector<std::uint8_t> serialize(const Tensor& t, Rt01Dtype dtype) {
  std::ostringstream os(std::ios::binary);
  write_rt01(os, t, dtype);
  const std::string s = os.str();
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

Tensor deserialize(const std::vector<std::uint8_t>& bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  return read_rt01(is);
}

}  // namespace rsseg
