#ifndef RSSEG_TENSOR_HPP
#define RSSEG_TENSOR_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsseg {

// Error taxonomy shared across the library. The C API maps these onto
// exit/status codes, so keep the set small.
enum class ErrorKind { Usage, Data, Numeric };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

inline Error usage_error(const std::string& msg) { return Error(ErrorKind::Usage, msg); }
inline Error data_error(const std::string& msg) { return Error(ErrorKind::Data, msg); }
inline Error numeric_error(const std::string& msg) { return Error(ErrorKind::Numeric, msg); }

/// Extents of a 4-axis tensor, (batch, channel, height, width).
struct Shape4 {
  std::array<std::size_t, 4> e{0, 0, 0, 0};

  Shape4() = default;
  Shape4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) : e{n, c, h, w} {}

  std::size_t n() const { return e[0]; }
  std::size_t c() const { return e[1]; }
  std::size_t h() const { return e[2]; }
  std::size_t w() const { return e[3]; }
  std::size_t numel() const { return e[0] * e[1] * e[2] * e[3]; }

  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

/// Dense row-major (N, C, H, W) array of doubles. Storage may be written as
/// f32 on disk, but in-memory arithmetic is always 64-bit.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape4 shape, double fill = 0.0)
      : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : Tensor(Shape4(n, c, h, w), fill) {}

  const Shape4& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_.c() + c) * shape_.h() + h) * shape_.w() + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_.c() + c) * shape_.h() + h) * shape_.w() + w];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool operator==(const Tensor&) const = default;

  bool all_finite() const;

  static Tensor randn(Shape4 shape, std::mt19937_64& rng, double stddev = 1.0);
  static Tensor rand_uniform(Shape4 shape, std::mt19937_64& rng, double lo = 0.0,
                             double hi = 1.0);

private:
  Shape4 shape_;
  std::vector<double> data_;
};

/// Per-pixel class indices; the companion value type to a K-channel ProbMap.
struct LabelMap {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<int> v;

  LabelMap() = default;
  LabelMap(std::size_t height, std::size_t width, int fill = 0)
      : h(height), w(width), v(height * width, fill) {}

  int& at(std::size_t r, std::size_t c) { return v[r * w + c]; }
  int at(std::size_t r, std::size_t c) const { return v[r * w + c]; }
  std::size_t size() const { return v.size(); }

  bool operator==(const LabelMap&) const = default;
};

// Elementwise ops. Shapes must match exactly; scalar overloads broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor elem_max(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor sub(const Tensor& a, double s);
Tensor mul(const Tensor& a, double s);
Tensor elem_max(const Tensor& a, double s);

void add_inplace(Tensor& a, const Tensor& b);

/// Per-pixel channel argmax of batch item n; ties break toward the lowest
/// class index.
LabelMap argmax_channels(const Tensor& t, std::size_t n = 0);

/// Channel concatenation: a's channels first. N, H, W must agree.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Channels [c0, c1) of x, copied out.
Tensor slice_channels(const Tensor& x, std::size_t c0, std::size_t c1);

// RT01 raw tensor format: magic "RT01", dtype tag byte (1 = f32, 2 = f64),
// three reserved zero bytes, four little-endian u64 extents, row-major payload.
enum class Rt01Dtype : std::uint8_t { F32 = 1, F64 = 2 };

void write_rt01(std::ostream& os, const Tensor& t, Rt01Dtype dtype = Rt01Dtype::F64);
Tensor read_rt01(std::istream& is);
void save_rt01(const std::string& path, const Tensor& t, Rt01Dtype dtype = Rt01Dtype::F64);
Tensor load_rt01(const std::string& path);

std::vector<std::uint8_t> serialize(const Tensor& t, Rt01Dtype dtype = Rt01Dtype::F64);
Tensor deserialize(const std::vector<std::uint8_t>& bytes);

}  // namespace rsseg

#endif
