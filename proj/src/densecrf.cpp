#include "rsseg/densecrf.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>

namespace rsseg::crf {

void CrfParams::validate() const {
  if (w1 < 0 || w2 < 0) throw usage_error("crf: kernel weights must be non-negative");
  if (!(sigma_alpha > 0) || !(sigma_beta > 0) || !(sigma_gamma > 0))
    throw usage_error("crf: sigmas must be positive");
  if (iterations < 1) throw usage_error("crf: iterations must be >= 1");
}

FeatureField spatial_features(std::size_t h, std::size_t w, double sigma) {
  FeatureField ff{2, h * w, {}};
  ff.f.resize(ff.pixels * 2);
  std::size_t i = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      ff.f[i * 2 + 0] = static_cast<double>(y) / sigma;
      ff.f[i * 2 + 1] = static_cast<double>(x) / sigma;
      ++i;
    }
  return ff;
}

FeatureField bilateral_features(const Tensor& image, double sigma_spatial,
                                double sigma_color) {
  const Shape4& s = image.shape();
  if (s.n() != 1 || s.c() < 1)
    throw usage_error("bilateral_features: expected (1,C,H,W), got " + s.str());
  const std::size_t C = s.c(), plane = s.h() * s.w();
  FeatureField ff{2 + C, plane, {}};
  ff.f.resize(ff.pixels * ff.dim);
  std::size_t i = 0;
  for (std::size_t y = 0; y < s.h(); ++y)
    for (std::size_t x = 0; x < s.w(); ++x) {
      double* f = ff.at(i);
      f[0] = static_cast<double>(y) / sigma_spatial;
      f[1] = static_cast<double>(x) / sigma_spatial;
      // Color bandwidth is in 8-bit intensity units; rasters are loaded as
      // [0,1], so rescale here.
      for (std::size_t c = 0; c < C; ++c)
        f[2 + c] = image.data()[c * plane + i] * 255.0 / sigma_color;
      ++i;
    }
  return ff;
}

Tensor unary_from_probs(const Tensor& probs) {
  if (!probs.all_finite()) throw numeric_error("unary_from_probs: non-finite input");
  Tensor u(probs.shape());
  for (std::size_t i = 0; i < probs.numel(); ++i)
    u[i] = -std::log(std::max(probs[i], 1e-12));
  return u;
}

double kernel_eval(const double* pi, const double* pj, const double* ci, const double* cj,
                   std::size_t color_dim, const CrfParams& p) {
  const double dp = (pi[0] - pj[0]) * (pi[0] - pj[0]) + (pi[1] - pj[1]) * (pi[1] - pj[1]);
  double dc = 0.0;
  for (std::size_t k = 0; k < color_dim; ++k) dc += (ci[k] - cj[k]) * (ci[k] - cj[k]);
  return p.w1 * std::exp(-dp / (2 * p.sigma_alpha * p.sigma_alpha) -
                         dc / (2 * p.sigma_beta * p.sigma_beta)) +
         p.w2 * std::exp(-dp / (2 * p.sigma_gamma * p.sigma_gamma));
}

double energy(const LabelMap& labels, const Tensor& unary, const Tensor& image,
              const CrfParams& p, std::size_t guard) {
  const Shape4& s = unary.shape();
  const std::size_t plane = s.h() * s.w();
  if (labels.h != s.h() || labels.w != s.w())
    throw usage_error("energy: label extent does not match unary " + s.str());
  if (image.shape().h() != s.h() || image.shape().w() != s.w())
    throw usage_error("energy: image extent does not match unary");
  if (plane > guard)
    throw usage_error("energy: " + std::to_string(plane) +
                      " pixels exceeds the O(N^2) guard of " + std::to_string(guard));
  double e = 0.0;
  for (std::size_t i = 0; i < plane; ++i)
    e += unary.data()[static_cast<std::size_t>(labels.v[i]) * plane + i];

  const std::size_t C = image.shape().c();
  std::vector<double> pos(plane * 2), col(plane * C);
  std::size_t i = 0;
  for (std::size_t y = 0; y < s.h(); ++y)
    for (std::size_t x = 0; x < s.w(); ++x) {
      pos[i * 2] = static_cast<double>(y);
      pos[i * 2 + 1] = static_cast<double>(x);
      for (std::size_t c = 0; c < C; ++c)
        col[i * C + c] = image.data()[c * plane + i] * 255.0;
      ++i;
    }
  // Ordered pairs i != j: each unordered pair contributes twice.
  double pair = 0.0;
  for (std::size_t a = 0; a < plane; ++a)
    for (std::size_t b = a + 1; b < plane; ++b)
      if (potts(labels.v[a], labels.v[b]))
        pair += 2.0 * kernel_eval(&pos[a * 2], &pos[b * 2], &col[a * C], &col[b * C], C, p);
  return e + pair;
}

std::vector<double> gaussian_filter_bruteforce(const std::vector<double>& values,
                                               std::size_t channels,
                                               const FeatureField& ff, std::size_t guard) {
  const std::size_t P = ff.pixels;
  if (P > guard)
    throw usage_error("gaussian_filter_bruteforce: " + std::to_string(P) +
                      " pixels exceeds the O(N^2) guard of " + std::to_string(guard));
  if (values.size() != channels * P)
    throw usage_error("gaussian_filter_bruteforce: value length mismatch");
  std::vector<double> out(values.size(), 0.0);
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t j = 0; j < P; ++j) {
      if (j == i) continue;
      double d2 = 0.0;
      const double* fi = ff.at(i);
      const double* fj = ff.at(j);
      for (std::size_t k = 0; k < ff.dim; ++k) d2 += (fi[k] - fj[k]) * (fi[k] - fj[k]);
      const double w = std::exp(-0.5 * d2);
      for (std::size_t c = 0; c < channels; ++c) out[c * P + i] += w * values[c * P + j];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Permutohedral lattice (embed, splat, blur, slice)
// ---------------------------------------------------------------------------

namespace {

struct KeyHash {
  std::size_t operator()(const std::string& s) const { return std::hash<std::string>()(s); }
};

std::string make_key(const short* k, std::size_t d) {
  return std::string(reinterpret_cast<const char*>(k), d * sizeof(short));
}

}  // namespace

namespace {

// Calibration constants for the unnormalized Gaussian convention, indexed by
// feature dimension d-1. kLatticeGamma pre-scales features before embedding
// (correcting the composite splat/blur/slice variance) and kLatticeAmp maps
// sliced lattice output onto exp(-||df||^2 / 2) kernel weights. Both were fit
// by least squares against the exact filter on dense random fields; entries
// beyond d = 6 are extrapolated (the documented accuracy budget applies to
// d <= 5).
constexpr double kLatticeGamma[16] = {1.03, 1.04, 1.04, 1.05, 1.05, 1.05, 1.05, 1.05,
                                      1.05, 1.05, 1.05, 1.05, 1.05, 1.05, 1.05, 1.05};
constexpr double kLatticeAmp[16] = {0.741146, 0.966835, 1.182386, 1.436194,
                                    1.677744, 1.933568, 2.2236,   2.5571,
                                    2.9407,   3.3818,   3.8891,   4.4725,
                                    5.1434,   5.9149,   6.8021,   7.8224};

}  // namespace

Permutohedral::Permutohedral(const FeatureField& ff, int replicas)
    : pixels_(ff.pixels), d_(ff.dim) {
  if (d_ == 0 || d_ > 16)
    throw usage_error("permutohedral: feature dimension must be in [1,16], got " +
                      std::to_string(d_));
  if (replicas < 1 || replicas > 64)
    throw usage_error("permutohedral: replicas must be in [1,64]");
  for (double v : ff.f)
    if (!std::isfinite(v)) throw numeric_error("permutohedral: non-finite feature");

  const std::size_t d = d_;
  const double gamma = kLatticeGamma[d - 1];
  const double amp = kLatticeAmp[d - 1];
  amplitude_ = amp / static_cast<double>(replicas);

  const double inv_std_dev = std::sqrt(2.0 / 3.0) * static_cast<double>(d + 1) * gamma;
  std::vector<double> scale(d);
  for (std::size_t i = 0; i < d; ++i)
    scale[i] = inv_std_dev / std::sqrt(static_cast<double>((i + 1) * (i + 2)));

  // Canonical simplex coordinates.
  std::vector<short> canonical((d + 1) * (d + 1));
  for (std::size_t i = 0; i <= d; ++i) {
    for (std::size_t j = 0; j <= d - i; ++j)
      canonical[i * (d + 1) + j] = static_cast<short>(i);
    for (std::size_t j = d - i + 1; j <= d; ++j)
      canonical[i * (d + 1) + j] = static_cast<short>(i) - static_cast<short>(d + 1);
  }

  // Deterministic per-replica lattice phase shifts (same shift for every
  // pixel, so pairwise distances are untouched); averaging the replicas
  // suppresses the lattice discretization noise.
  std::mt19937_64 shift_rng(0x5eedUL);
  std::uniform_real_distribution<double> uni(0.0, 8.0);

  lattices_.resize(static_cast<std::size_t>(replicas));
  std::vector<double> shift(d);
  std::vector<double> elevated(d + 1);
  std::vector<short> rem0(d + 1), rank(d + 1), key(d + 1);
  std::vector<double> bary(d + 2);

  for (Lattice& lat : lattices_) {
    for (std::size_t i = 0; i < d; ++i) shift[i] = uni(shift_rng);

    lat.offsets.assign(pixels_ * (d + 1), 0);
    lat.barycentric.assign(pixels_ * (d + 1), 0.0);

    std::unordered_map<std::string, int, KeyHash> table;
    std::vector<std::string> keys;  // lattice point index -> key bytes

    for (std::size_t n = 0; n < pixels_; ++n) {
      const double* f = ff.at(n);

      // Embed into the hyperplane sum(x) = 0 using the E matrix recurrence.
      double sm = 0.0;
      for (std::size_t i = d; i > 0; --i) {
        const double cf = (f[i - 1] + shift[i - 1]) * scale[i - 1];
        elevated[i] = sm - static_cast<double>(i) * cf;
        sm += cf;
      }
      elevated[0] = sm;

      // Closest 0-colored lattice point by rounding to multiples of d+1.
      const double down_factor = 1.0 / static_cast<double>(d + 1);
      const double up_factor = static_cast<double>(d + 1);
      int sum = 0;
      for (std::size_t i = 0; i <= d; ++i) {
        const double v = down_factor * elevated[i];
        const double up = std::ceil(v) * up_factor;
        const double down = std::floor(v) * up_factor;
        rem0[i] = static_cast<short>(up - elevated[i] < elevated[i] - down ? up : down);
        sum += rem0[i];
      }
      sum /= static_cast<int>(d + 1);

      // Rank differentials to identify the enclosing simplex.
      std::fill(rank.begin(), rank.end(), 0);
      for (std::size_t i = 0; i < d; ++i) {
        const double di = elevated[i] - rem0[i];
        for (std::size_t j = i + 1; j <= d; ++j) {
          if (di < elevated[j] - rem0[j])
            ++rank[i];
          else
            ++rank[j];
        }
      }

      // Walk back onto the plane if rounding left it.
      for (std::size_t i = 0; i <= d; ++i) {
        rank[i] = static_cast<short>(rank[i] + sum);
        if (rank[i] < 0) {
          rank[i] = static_cast<short>(rank[i] + d + 1);
          rem0[i] = static_cast<short>(rem0[i] + d + 1);
        } else if (rank[i] > static_cast<short>(d)) {
          rank[i] = static_cast<short>(rank[i] - (d + 1));
          rem0[i] = static_cast<short>(rem0[i] - (d + 1));
        }
      }

      // Barycentric coordinates.
      std::fill(bary.begin(), bary.end(), 0.0);
      for (std::size_t i = 0; i <= d; ++i) {
        const double v = (elevated[i] - rem0[i]) * down_factor;
        bary[d - static_cast<std::size_t>(rank[i])] += v;
        bary[d - static_cast<std::size_t>(rank[i]) + 1] -= v;
      }
      bary[0] += 1.0 + bary[d + 1];

      // Register the d+1 simplex vertices.
      for (std::size_t remainder = 0; remainder <= d; ++remainder) {
        for (std::size_t i = 0; i < d; ++i)
          key[i] = static_cast<short>(
              rem0[i] + canonical[remainder * (d + 1) + static_cast<std::size_t>(rank[i])]);
        const std::string kb = make_key(key.data(), d);
        auto [it, inserted] = table.try_emplace(kb, static_cast<int>(keys.size()));
        if (inserted) keys.push_back(kb);
        lat.offsets[n * (d + 1) + remainder] = it->second;
        lat.barycentric[n * (d + 1) + remainder] = bary[remainder];
      }
    }

    // Close the point set under the blur stencil, axis by axis in blur order,
    // so no mass is lost to unallocated neighbors: any point reachable in one
    // step along axis j from a point holding mass before pass j is enrolled.
    // A cap bounds the growth on pathologically sparse inputs.
    {
      const std::size_t cap =
          std::max<std::size_t>(std::size_t(1) << 20, 64 * keys.size());
      std::vector<short> base(d), nb(d);
      for (std::size_t j = 0; j <= d && keys.size() < cap; ++j) {
        const std::size_t count = keys.size();
        for (std::size_t i = 0; i < count && keys.size() < cap; ++i) {
          std::memcpy(base.data(), keys[i].data(), d * sizeof(short));
          for (int dir = 0; dir < 2; ++dir) {
            const short step = dir == 0 ? short(-1) : short(1);
            for (std::size_t m = 0; m < d; ++m) nb[m] = static_cast<short>(base[m] + step);
            if (j < d) nb[j] = static_cast<short>(base[j] - step * static_cast<short>(d));
            const std::string kb = make_key(nb.data(), d);
            auto [it, inserted] = table.try_emplace(kb, static_cast<int>(keys.size()));
            if (inserted) keys.push_back(kb);
          }
        }
      }
    }

    lat.points = keys.size();

    // Neighbor indices along each of the d+1 lattice directions (-1 = absent).
    lat.blur_neighbors.assign(lat.points * (d + 1) * 2, -1);
    std::vector<short> n1(d), n2(d);
    for (std::size_t j = 0; j <= d; ++j) {
      for (std::size_t i = 0; i < lat.points; ++i) {
        const short* k = reinterpret_cast<const short*>(keys[i].data());
        for (std::size_t m = 0; m < d; ++m) {
          n1[m] = static_cast<short>(k[m] - 1);
          n2[m] = static_cast<short>(k[m] + 1);
        }
        if (j < d) {
          n1[j] = static_cast<short>(k[j] + d);
          n2[j] = static_cast<short>(k[j] - d);
        }
        auto f1 = table.find(make_key(n1.data(), d));
        auto f2 = table.find(make_key(n2.data(), d));
        lat.blur_neighbors[(j * lat.points + i) * 2 + 0] =
            f1 == table.end() ? -1 : f1->second;
        lat.blur_neighbors[(j * lat.points + i) * 2 + 1] =
            f2 == table.end() ? -1 : f2->second;
      }
    }
  }
}

std::vector<double> Permutohedral::filter(const std::vector<double>& values,
                                          std::size_t channels) const {
  if (values.size() != channels * pixels_)
    throw usage_error("permutohedral: value length mismatch");
  const std::size_t d = d_;

  std::vector<double> out(values.size(), 0.0);
  std::vector<double> lat, tmp;
  for (const Lattice& L : lattices_) {
    const std::size_t M = L.points;
    lat.assign(M * channels, 0.0);
    tmp.assign(M * channels, 0.0);

    // Splat.
    for (std::size_t n = 0; n < pixels_; ++n)
      for (std::size_t r = 0; r <= d; ++r) {
        const std::size_t o = static_cast<std::size_t>(L.offsets[n * (d + 1) + r]);
        const double w = L.barycentric[n * (d + 1) + r];
        for (std::size_t c = 0; c < channels; ++c)
          lat[o * channels + c] += w * values[c * pixels_ + n];
      }

    // Blur along each lattice direction with a [1/2, 1, 1/2] stencil.
    for (std::size_t j = 0; j <= d; ++j) {
      for (std::size_t i = 0; i < M; ++i) {
        const int a = L.blur_neighbors[(j * M + i) * 2 + 0];
        const int b = L.blur_neighbors[(j * M + i) * 2 + 1];
        for (std::size_t c = 0; c < channels; ++c) {
          const double va = a < 0 ? 0.0 : lat[static_cast<std::size_t>(a) * channels + c];
          const double vb = b < 0 ? 0.0 : lat[static_cast<std::size_t>(b) * channels + c];
          tmp[i * channels + c] = lat[i * channels + c] + 0.5 * (va + vb);
        }
      }
      std::swap(lat, tmp);
    }

    // Slice, averaging replicas with the calibrated amplitude.
    for (std::size_t n = 0; n < pixels_; ++n)
      for (std::size_t r = 0; r <= d; ++r) {
        const std::size_t o = static_cast<std::size_t>(L.offsets[n * (d + 1) + r]);
        const double w = L.barycentric[n * (d + 1) + r] * amplitude_;
        for (std::size_t c = 0; c < channels; ++c)
          out[c * pixels_ + n] += w * lat[o * channels + c];
      }
  }

  // Match the oracle's j != i convention: the kernel weighs self by 1.
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t n = 0; n < pixels_; ++n) out[c * pixels_ + n] -= values[c * pixels_ + n];
  return out;
}

std::vector<double> permutohedral_filter(const std::vector<double>& values,
                                         std::size_t channels, const FeatureField& ff) {
  return Permutohedral(ff).filter(values, channels);
}

// ---------------------------------------------------------------------------
// Mean-field inference
// ---------------------------------------------------------------------------

InferenceResult meanfield_infer(const Tensor& unary, const Tensor& image,
                                const CrfParams& p, FilterPath path) {
  p.validate();
  const Shape4& s = unary.shape();
  if (s.n() != 1) throw usage_error("meanfield_infer: expected batch 1, got " + s.str());
  if (image.shape().h() != s.h() || image.shape().w() != s.w())
    throw usage_error("meanfield_infer: image extent " + image.shape().str() +
                      " does not match unary " + s.str());
  const std::size_t K = s.c(), P = s.h() * s.w();

  // Q0 = softmax(-unary).
  Tensor q(s);
  auto renormalize = [&](const std::vector<double>& exponent) {
    for (std::size_t i = 0; i < P; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < K; ++c) mx = std::max(mx, exponent[c * P + i]);
      double z = 0.0;
      for (std::size_t c = 0; c < K; ++c) {
        const double e = std::exp(exponent[c * P + i] - mx);
        q[c * P + i] = e;
        z += e;
      }
      for (std::size_t c = 0; c < K; ++c) q[c * P + i] /= z;
    }
  };
  {
    std::vector<double> e(K * P);
    for (std::size_t i = 0; i < K * P; ++i) e[i] = -unary[i];
    renormalize(e);
  }

  const bool use_app = p.w1 > 0.0;
  const bool use_smooth = p.w2 > 0.0;
  FeatureField app, smooth;
  std::unique_ptr<Permutohedral> lat_app, lat_smooth;
  if (use_app) {
    app = bilateral_features(image, p.sigma_alpha, p.sigma_beta);
    if (path == FilterPath::Lattice) lat_app = std::make_unique<Permutohedral>(app, 16);
  }
  if (use_smooth) {
    smooth = spatial_features(s.h(), s.w(), p.sigma_gamma);
    if (path == FilterPath::Lattice) lat_smooth = std::make_unique<Permutohedral>(smooth, 16);
  }

  std::vector<double> exponent(K * P);
  for (int it = 0; it < p.iterations; ++it) {
    std::vector<double> message(K * P, 0.0);
    if (use_app) {
      const std::vector<double> f = path == FilterPath::Lattice
                                        ? lat_app->filter(q.vec(), K)
                                        : gaussian_filter_bruteforce(q.vec(), K, app);
      for (std::size_t i = 0; i < K * P; ++i) message[i] += p.w1 * f[i];
    }
    if (use_smooth) {
      const std::vector<double> f = path == FilterPath::Lattice
                                        ? lat_smooth->filter(q.vec(), K)
                                        : gaussian_filter_bruteforce(q.vec(), K, smooth);
      for (std::size_t i = 0; i < K * P; ++i) message[i] += p.w2 * f[i];
    }
    // Potts compatibility: the penalty for label l is the message mass of all
    // other labels.
    for (std::size_t i = 0; i < P; ++i) {
      double total = 0.0;
      for (std::size_t c = 0; c < K; ++c) total += message[c * P + i];
      for (std::size_t c = 0; c < K; ++c)
        exponent[c * P + i] = -unary[c * P + i] - (total - message[c * P + i]);
    }
    renormalize(exponent);
  }

  InferenceResult r{std::move(q), {}};
  r.labels = argmax_channels(r.q);
  return r;
}

}  // namespace rsseg::crf
