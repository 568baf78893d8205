#include "rsseg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rsseg/config.hpp"

namespace rsseg::nn {

namespace {

using i64 = std::int64_t;

i64 floor_div(i64 a, i64 b) {
  i64 q = a / b, r = a % b;
  return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}
i64 ceil_div(i64 a, i64 b) { return -floor_div(-a, b); }

void accum_grad(Tensor& dst, const Tensor& g) {
  if (dst.numel() == 0 && dst.shape() != g.shape())
    dst = g;
  else
    add_inplace(dst, g);
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

Tensor conv2d_forward(const Conv2d& l, const Tensor& x) {
  const Shape4& s = x.shape();
  if (static_cast<int>(s.c()) != l.in_channels())
    throw usage_error("conv2d: input has " + std::to_string(s.c()) +
                      " channels, layer expects " + std::to_string(l.in_channels()));
  const i64 k = l.kernel(), keff = l.effective_kernel();
  const i64 st = l.stride, dil = l.dilation, pad = l.pad;
  const i64 N = s.n(), Ci = s.c(), H = s.h(), W = s.w(), Co = l.out_channels();
  if (H + 2 * pad < keff || W + 2 * pad < keff)
    throw usage_error("conv2d: output extent <= 0 for input " + s.str() +
                      ", effective kernel " + std::to_string(keff));
  const i64 Ho = (H + 2 * pad - keff) / st + 1;
  const i64 Wo = (W + 2 * pad - keff) / st + 1;
  Tensor out(N, Co, Ho, Wo);
  const double* xd = x.data();
  const double* wd = l.weight.data();
  double* od = out.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (i64 n = 0; n < N; ++n) {
    for (i64 co = 0; co < Co; ++co) {
      double* oplane = od + (n * Co + co) * Ho * Wo;
      const double b = l.bias[static_cast<std::size_t>(co)];
      std::fill(oplane, oplane + Ho * Wo, b);
      for (i64 ci = 0; ci < Ci; ++ci) {
        const double* xplane = xd + (n * Ci + ci) * H * W;
        const double* wrow = wd + ((co * Ci + ci) * k) * k;
        for (i64 ky = 0; ky < k; ++ky) {
          for (i64 kx = 0; kx < k; ++kx) {
            const double w = wrow[ky * k + kx];
            if (w == 0.0) continue;
            const i64 dy = ky * dil - pad, dx = kx * dil - pad;
            const i64 oy_lo = std::max<i64>(0, ceil_div(-dy, st));
            const i64 oy_hi = std::min<i64>(Ho - 1, floor_div(H - 1 - dy, st));
            const i64 ox_lo = std::max<i64>(0, ceil_div(-dx, st));
            const i64 ox_hi = std::min<i64>(Wo - 1, floor_div(W - 1 - dx, st));
            for (i64 oy = oy_lo; oy <= oy_hi; ++oy) {
              const double* xr = xplane + (oy * st + dy) * W + dx;
              double* orow = oplane + oy * Wo;
              for (i64 ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += w * xr[ox * st];
            }
          }
        }
      }
    }
  }
  return out;
}

Conv2dGrads conv2d_backward(const Conv2d& l, const Tensor& x, const Tensor& grad_out) {
  const Shape4& s = x.shape();
  const i64 k = l.kernel(), st = l.stride, dil = l.dilation, pad = l.pad;
  const i64 N = s.n(), Ci = s.c(), H = s.h(), W = s.w(), Co = l.out_channels();
  const i64 Ho = grad_out.shape().h(), Wo = grad_out.shape().w();
  {
    const i64 keff = l.effective_kernel();
    const i64 eho = (H + 2 * pad - keff) / st + 1, ewo = (W + 2 * pad - keff) / st + 1;
    if (grad_out.shape() != Shape4(s.n(), l.out_channels(), eho, ewo))
      throw usage_error("conv2d_backward: grad shape " + grad_out.shape().str() +
                        " does not match forward output");
  }
  Conv2dGrads g{Tensor(s), Tensor(l.weight.shape()), Tensor(l.bias.shape())};
  const double* xd = x.data();
  const double* gd = grad_out.data();
  const double* wd = l.weight.data();

  for (i64 co = 0; co < Co; ++co) {
    double acc = 0.0;
    for (i64 n = 0; n < N; ++n) {
      const double* gp = gd + (n * Co + co) * Ho * Wo;
      for (i64 i = 0; i < Ho * Wo; ++i) acc += gp[i];
    }
    g.bias[static_cast<std::size_t>(co)] = acc;
  }

#pragma omp parallel for collapse(2) schedule(static)
  for (i64 co = 0; co < Co; ++co) {
    for (i64 ci = 0; ci < Ci; ++ci) {
      double* wgrad = g.weight.data() + ((co * Ci + ci) * k) * k;
      for (i64 ky = 0; ky < k; ++ky) {
        for (i64 kx = 0; kx < k; ++kx) {
          const i64 dy = ky * dil - pad, dx = kx * dil - pad;
          const i64 oy_lo = std::max<i64>(0, ceil_div(-dy, st));
          const i64 oy_hi = std::min<i64>(Ho - 1, floor_div(H - 1 - dy, st));
          const i64 ox_lo = std::max<i64>(0, ceil_div(-dx, st));
          const i64 ox_hi = std::min<i64>(Wo - 1, floor_div(W - 1 - dx, st));
          double acc = 0.0;
          for (i64 n = 0; n < N; ++n) {
            const double* xplane = xd + (n * Ci + ci) * H * W;
            const double* gplane = gd + (n * Co + co) * Ho * Wo;
            for (i64 oy = oy_lo; oy <= oy_hi; ++oy) {
              const double* xr = xplane + (oy * st + dy) * W + dx;
              const double* gr = gplane + oy * Wo;
              for (i64 ox = ox_lo; ox <= ox_hi; ++ox) acc += xr[ox * st] * gr[ox];
            }
          }
          wgrad[ky * k + kx] = acc;
        }
      }
    }
  }

#pragma omp parallel for collapse(2) schedule(static)
  for (i64 n = 0; n < N; ++n) {
    for (i64 ci = 0; ci < Ci; ++ci) {
      double* gxplane = g.x.data() + (n * Ci + ci) * H * W;
      for (i64 co = 0; co < Co; ++co) {
        const double* gplane = gd + (n * Co + co) * Ho * Wo;
        const double* wrow = wd + ((co * Ci + ci) * k) * k;
        for (i64 ky = 0; ky < k; ++ky) {
          for (i64 kx = 0; kx < k; ++kx) {
            const double w = wrow[ky * k + kx];
            if (w == 0.0) continue;
            const i64 dy = ky * dil - pad, dx = kx * dil - pad;
            const i64 oy_lo = std::max<i64>(0, ceil_div(-dy, st));
            const i64 oy_hi = std::min<i64>(Ho - 1, floor_div(H - 1 - dy, st));
            const i64 ox_lo = std::max<i64>(0, ceil_div(-dx, st));
            const i64 ox_hi = std::min<i64>(Wo - 1, floor_div(W - 1 - dx, st));
            for (i64 oy = oy_lo; oy <= oy_hi; ++oy) {
              double* xr = gxplane + (oy * st + dy) * W + dx;
              const double* gr = gplane + oy * Wo;
              for (i64 ox = ox_lo; ox <= ox_hi; ++ox) xr[ox * st] += w * gr[ox];
            }
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// transpose conv2d
// ---------------------------------------------------------------------------

Tensor transpose_conv2d_forward(const TransposeConv2d& l, const Tensor& x) {
  const Shape4& s = x.shape();
  if (static_cast<int>(s.c()) != l.in_channels())
    throw usage_error("transpose_conv2d: input has " + std::to_string(s.c()) +
                      " channels, layer expects " + std::to_string(l.in_channels()));
  const i64 k = l.kernel(), st = l.stride, pad = l.pad, op = l.output_padding;
  const i64 N = s.n(), Ci = s.c(), H = s.h(), W = s.w(), Co = l.out_channels();
  const i64 Ho = (H - 1) * st - 2 * pad + k + op;
  const i64 Wo = (W - 1) * st - 2 * pad + k + op;
  if (Ho <= 0 || Wo <= 0)
    throw usage_error("transpose_conv2d: non-positive output extent for input " + s.str());
  Tensor out(N, Co, Ho, Wo);
  const double* xd = x.data();
  const double* wd = l.weight.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (i64 n = 0; n < N; ++n) {
    for (i64 co = 0; co < Co; ++co) {
      double* oplane = out.data() + (n * Co + co) * Ho * Wo;
      std::fill(oplane, oplane + Ho * Wo, l.bias[static_cast<std::size_t>(co)]);
      for (i64 ci = 0; ci < Ci; ++ci) {
        const double* xplane = xd + (n * Ci + ci) * H * W;
        const double* wblk = wd + ((ci * Co + co) * k) * k;
        for (i64 iy = 0; iy < H; ++iy) {
          for (i64 ix = 0; ix < W; ++ix) {
            const double xv = xplane[iy * W + ix];
            if (xv == 0.0) continue;
            const i64 oy0 = iy * st - pad, ox0 = ix * st - pad;
            for (i64 ky = 0; ky < k; ++ky) {
              const i64 oy = oy0 + ky;
              if (oy < 0 || oy >= Ho) continue;
              for (i64 kx = 0; kx < k; ++kx) {
                const i64 ox = ox0 + kx;
                if (ox < 0 || ox >= Wo) continue;
                oplane[oy * Wo + ox] += wblk[ky * k + kx] * xv;
              }
            }
          }
        }
      }
    }
  }
  return out;
}

Conv2dGrads transpose_conv2d_backward(const TransposeConv2d& l, const Tensor& x,
                                      const Tensor& grad_out) {
  const Shape4& s = x.shape();
  const i64 k = l.kernel(), st = l.stride, pad = l.pad, op = l.output_padding;
  const i64 N = s.n(), Ci = s.c(), H = s.h(), W = s.w(), Co = l.out_channels();
  const i64 Ho = (H - 1) * st - 2 * pad + k + op;
  const i64 Wo = (W - 1) * st - 2 * pad + k + op;
  if (grad_out.shape() != Shape4(s.n(), l.out_channels(), Ho, Wo))
    throw usage_error("transpose_conv2d_backward: grad shape " + grad_out.shape().str() +
                      " does not match forward output");
  Conv2dGrads g{Tensor(s), Tensor(l.weight.shape()), Tensor(l.bias.shape())};
  const double* xd = x.data();
  const double* gd = grad_out.data();
  const double* wd = l.weight.data();

  for (i64 co = 0; co < Co; ++co) {
    double acc = 0.0;
    for (i64 n = 0; n < N; ++n) {
      const double* gp = gd + (n * Co + co) * Ho * Wo;
      for (i64 i = 0; i < Ho * Wo; ++i) acc += gp[i];
    }
    g.bias[static_cast<std::size_t>(co)] = acc;
  }

#pragma omp parallel for collapse(2) schedule(static)
  for (i64 ci = 0; ci < Ci; ++ci) {
    for (i64 co = 0; co < Co; ++co) {
      double* wgrad = g.weight.data() + ((ci * Co + co) * k) * k;
      for (i64 ky = 0; ky < k; ++ky) {
        for (i64 kx = 0; kx < k; ++kx) {
          double acc = 0.0;
          for (i64 n = 0; n < N; ++n) {
            const double* xplane = xd + (n * Ci + ci) * H * W;
            const double* gplane = gd + (n * Co + co) * Ho * Wo;
            for (i64 iy = 0; iy < H; ++iy) {
              const i64 oy = iy * st - pad + ky;
              if (oy < 0 || oy >= Ho) continue;
              for (i64 ix = 0; ix < W; ++ix) {
                const i64 ox = ix * st - pad + kx;
                if (ox < 0 || ox >= Wo) continue;
                acc += xplane[iy * W + ix] * gplane[oy * Wo + ox];
              }
            }
          }
          wgrad[ky * k + kx] = acc;
        }
      }
    }
  }

#pragma omp parallel for collapse(2) schedule(static)
  for (i64 n = 0; n < N; ++n) {
    for (i64 ci = 0; ci < Ci; ++ci) {
      double* gxplane = g.x.data() + (n * Ci + ci) * H * W;
      for (i64 co = 0; co < Co; ++co) {
        const double* gplane = gd + (n * Co + co) * Ho * Wo;
        const double* wblk = wd + ((ci * Co + co) * k) * k;
        for (i64 iy = 0; iy < H; ++iy) {
          for (i64 ix = 0; ix < W; ++ix) {
            double acc = 0.0;
            const i64 oy0 = iy * st - pad, ox0 = ix * st - pad;
            for (i64 ky = 0; ky < k; ++ky) {
              const i64 oy = oy0 + ky;
              if (oy < 0 || oy >= Ho) continue;
              for (i64 kx = 0; kx < k; ++kx) {
                const i64 ox = ox0 + kx;
                if (ox < 0 || ox >= Wo) continue;
                acc += wblk[ky * k + kx] * gplane[oy * Wo + ox];
              }
            }
            gxplane[iy * W + ix] += acc;
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// batch norm
// ---------------------------------------------------------------------------

Tensor batchnorm_forward(BatchNorm& l, const Tensor& x, bool train, BatchNormCache* cache) {
  const Shape4& s = x.shape();
  const std::size_t C = s.c();
  if (C != l.gamma.shape().c())
    throw usage_error("batchnorm: channel mismatch: input " + s.str() + ", layer C=" +
                      std::to_string(l.gamma.shape().c()));
  const std::size_t m = s.n() * s.h() * s.w();
  if (train && m < 2)
    throw usage_error("batchnorm: train mode needs >= 2 values per channel, got " +
                      std::to_string(m));
  const std::size_t plane = s.h() * s.w();
  std::vector<double> mean(C), inv_std(C);
  if (train) {
    for (std::size_t c = 0; c < C; ++c) {
      double sum = 0.0, sum2 = 0.0;
      for (std::size_t n = 0; n < s.n(); ++n) {
        const double* p = x.data() + (n * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum += p[i];
          sum2 += p[i] * p[i];
        }
      }
      const double mu = sum / static_cast<double>(m);
      double var = sum2 / static_cast<double>(m) - mu * mu;
      if (var < 0) var = 0;  // rounding guard
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + l.epsilon);
      l.running_mean[c] = (1.0 - l.momentum) * l.running_mean[c] + l.momentum * mu;
      const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
      l.running_var[c] = (1.0 - l.momentum) * l.running_var[c] + l.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = l.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(l.running_var[c] + l.epsilon);
    }
  }
  Tensor xhat(s);
  Tensor out(s);
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* p = x.data() + (n * C + c) * plane;
      double* xh = xhat.data() + (n * C + c) * plane;
      double* o = out.data() + (n * C + c) * plane;
      const double mu = mean[c], is = inv_std[c], gm = l.gamma[c], bt = l.beta[c];
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - mu) * is;
        o[i] = gm * xh[i] + bt;
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->batch_stats = train;
  }
  return out;
}

BatchNormGrads batchnorm_backward(const BatchNorm& l, const BatchNormCache& cache,
                                  const Tensor& grad_out) {
  const Shape4& s = grad_out.shape();
  const std::size_t C = s.c();
  const std::size_t m = s.n() * s.h() * s.w();
  const std::size_t plane = s.h() * s.w();
  BatchNormGrads g{Tensor(s), Tensor(l.gamma.shape()), Tensor(l.beta.shape())};
  for (std::size_t c = 0; c < C; ++c) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t n = 0; n < s.n(); ++n) {
      const double* gp = grad_out.data() + (n * C + c) * plane;
      const double* xh = cache.xhat.data() + (n * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        s1 += gp[i];
        s2 += gp[i] * xh[i];
      }
    }
    g.gamma[c] = s2;
    g.beta[c] = s1;
    const double gm = l.gamma[c], is = cache.inv_std[c];
    const double md = static_cast<double>(m);
    for (std::size_t n = 0; n < s.n(); ++n) {
      const double* gp = grad_out.data() + (n * C + c) * plane;
      const double* xh = cache.xhat.data() + (n * C + c) * plane;
      double* gx = g.x.data() + (n * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (cache.batch_stats)
          gx[i] = gm * is * (gp[i] - s1 / md - xh[i] * s2 / md);
        else
          gx[i] = gm * is * gp[i];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// relu / maxpool / softmax
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0 ? x[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) g[i] = x[i] > 0 ? grad_out[i] : 0.0;
  return g;
}

MaxPoolResult maxpool2(const Tensor& x) {
  const Shape4& s = x.shape();
  if (s.h() % 2 != 0 || s.w() % 2 != 0)
    throw usage_error("maxpool2: spatial extents must be even, got " + s.str());
  const std::size_t Ho = s.h() / 2, Wo = s.w() / 2;
  MaxPoolResult r{Tensor(s.n(), s.c(), Ho, Wo), {}};
  r.argmax.resize(r.out.numel());
  std::size_t oi = 0;
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t c = 0; c < s.c(); ++c) {
      for (std::size_t oy = 0; oy < Ho; ++oy) {
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx =
                  ((n * s.c() + c) * s.h() + 2 * oy + dy) * s.w() + 2 * ox + dx;
              if (x[idx] > best) {  // ties keep the first (lowest) index
                best = x[idx];
                best_idx = idx;
              }
            }
          }
          r.out[oi] = best;
          r.argmax[oi] = best_idx;
          ++oi;
        }
      }
    }
  }
  return r;
}

Tensor maxpool2_backward(const Shape4& in_shape, const std::vector<std::size_t>& argmax,
                         const Tensor& grad_out) {
  Tensor g(in_shape);
  for (std::size_t i = 0; i < grad_out.numel(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

Tensor softmax_channels(const Tensor& logits) {
  const Shape4& s = logits.shape();
  Tensor out(s);
  const std::size_t C = s.c(), plane = s.h() * s.w();
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < C; ++c)
        mx = std::max(mx, logits.data()[(n * C + c) * plane + i]);
      double z = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double e = std::exp(logits.data()[(n * C + c) * plane + i] - mx);
        out.data()[(n * C + c) * plane + i] = e;
        z += e;
      }
      for (std::size_t c = 0; c < C; ++c) out.data()[(n * C + c) * plane + i] /= z;
    }
  }
  return out;
}

Tensor softmax_channels_backward(const Tensor& probs, const Tensor& grad_out) {
  const Shape4& s = probs.shape();
  Tensor g(s);
  const std::size_t C = s.c(), plane = s.h() * s.w();
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t idx = (n * C + c) * plane + i;
        dot += grad_out[idx] * probs[idx];
      }
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t idx = (n * C + c) * plane + i;
        g[idx] = probs[idx] * (grad_out[idx] - dot);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// NetworkSpec
// ---------------------------------------------------------------------------

void NetworkSpec::validate() const {
  if (in_channels < 1) throw usage_error("spec: in_channels must be >= 1");
  if (classes < 2) throw usage_error("spec: classes must be >= 2");
  if (encoder_channels.empty()) throw usage_error("spec: encoder_channels empty");
  for (int c : encoder_channels)
    if (c < 1) throw usage_error("spec: encoder channel counts must be positive");
  if (bridge_blocks < 0) throw usage_error("spec: bridge_blocks must be >= 0");
}

std::string NetworkSpec::to_config() const {
  Config cfg;
  cfg.set("variant", variant == Variant::AC ? "ac" : "sc");
  cfg.set("in_channels", std::to_string(in_channels));
  cfg.set("classes", std::to_string(classes));
  std::string chans;
  for (std::size_t i = 0; i < encoder_channels.size(); ++i) {
    if (i) chans += ",";
    chans += std::to_string(encoder_channels[i]);
  }
  cfg.set("encoder_channels", chans);
  cfg.set("bridge_blocks", std::to_string(bridge_blocks));
  std::string out = cfg.str();
  out += "# layers:\n";
  for (const auto& d : describe()) out += "#   " + d + "\n";
  return out;
}

NetworkSpec NetworkSpec::from_config(const std::string& text) {
  const Config cfg = Config::parse(text);
  NetworkSpec spec;
  const std::string v = cfg.get_or("variant", "ac");
  if (v == "ac")
    spec.variant = Variant::AC;
  else if (v == "sc")
    spec.variant = Variant::SC;
  else
    throw data_error("spec: unknown variant '" + v + "' (expected ac or sc)");
  spec.in_channels = static_cast<int>(cfg.get_long("in_channels", 4));
  spec.classes = static_cast<int>(cfg.get_long("classes", 6));
  if (auto chans = cfg.get("encoder_channels")) {
    spec.encoder_channels.clear();
    for (const auto& tok : split(*chans, ','))
      spec.encoder_channels.push_back(std::stoi(tok));
  }
  spec.bridge_blocks = static_cast<int>(cfg.get_long("bridge_blocks", 4));
  spec.validate();
  return spec;
}

std::vector<std::string> NetworkSpec::describe() const {
  std::vector<std::string> out;
  auto conv = [](int cin, int cout, int k, int dil) {
    std::ostringstream os;
    os << "conv " << k << "x" << k << " " << cin << "->" << cout;
    if (dil > 1) os << " dilation " << dil;
    os << " + bn + relu";
    return os.str();
  };
  int prev = in_channels;
  for (int c : encoder_channels) {
    out.push_back(conv(prev, c, 3, 1));
    out.push_back(conv(c, c, 3, 1));
    out.push_back("maxpool 2x2 stride 2 (skip tap before pool)");
    prev = c;
  }
  const int d = variant == Variant::AC ? 2 : 1;
  for (int b = 0; b < bridge_blocks; ++b) out.push_back(conv(prev, prev, 3, d));
  for (int i = pool_depth() - 1; i >= 0; --i) {
    const int cout = encoder_channels[i];
    std::ostringstream os;
    if (variant == Variant::AC)
      os << "tconv 5x5 stride 2 " << prev << "->" << cout << " + bn + relu";
    else
      os << "tconv 2x2 stride 2 " << prev << "->" << cout;
    out.push_back(os.str());
    out.push_back("concat skip (" + std::to_string(cout) + " + " + std::to_string(cout) + ")");
    out.push_back(conv(2 * cout, cout, 3, 1));
    out.push_back(conv(cout, cout, 3, 1));
    prev = cout;
  }
  out.push_back("conv 1x1 " + std::to_string(prev) + "->" + std::to_string(classes) +
                " + softmax");
  return out;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

struct Network::Tape {
  std::vector<Tensor> values;
  std::vector<Tensor> grads;
  std::vector<std::function<void(Network&, Tape&)>> steps;
  long input_node = -1;
  long logits_node = -1;
  long probs_node = -1;
  long softmax_step = -1;
};

Network::Network() = default;
Network::~Network() = default;
Network::Network(const Network& other)
    : spec_(other.spec_),
      enc_(other.enc_),
      bridge_(other.bridge_),
      dec_(other.dec_),
      head_(other.head_),
      train_(other.train_),
      rf_(other.rf_) {}
Network& Network::operator=(const Network& other) {
  if (this != &other) {
    spec_ = other.spec_;
    enc_ = other.enc_;
    bridge_ = other.bridge_;
    dec_ = other.dec_;
    head_ = other.head_;
    train_ = other.train_;
    rf_ = other.rf_;
    tape_.reset();
    param_grads_.clear();
  }
  return *this;
}
Network::Network(Network&& other) noexcept
    : spec_(std::move(other.spec_)),
      enc_(std::move(other.enc_)),
      bridge_(std::move(other.bridge_)),
      dec_(std::move(other.dec_)),
      head_(std::move(other.head_)),
      train_(other.train_),
      rf_(other.rf_) {}
Network& Network::operator=(Network&& other) noexcept {
  if (this != &other) {
    spec_ = std::move(other.spec_);
    enc_ = std::move(other.enc_);
    bridge_ = std::move(other.bridge_);
    dec_ = std::move(other.dec_);
    head_ = std::move(other.head_);
    train_ = other.train_;
    rf_ = other.rf_;
    tape_.reset();
    param_grads_.clear();
  }
  return *this;
}

// Structure walkers. The parameter order here defines the order of params(),
// param_grads() and the checkpoint manifest; forward consumes indices in the
// same order.
struct NetworkAccess {
  template <typename F>
  static void for_each_param(Network& net, F&& f) {
    auto conv = [&](const std::string& n, Conv2d& c) {
      f(n + ".w", c.weight);
      f(n + ".b", c.bias);
    };
    auto tconv = [&](const std::string& n, TransposeConv2d& c) {
      f(n + ".w", c.weight);
      f(n + ".b", c.bias);
    };
    auto bn = [&](const std::string& n, BatchNorm& b) {
      f(n + ".gamma", b.gamma);
      f(n + ".beta", b.beta);
    };
    for (std::size_t i = 0; i < net.enc_.size(); ++i) {
      const std::string n = "enc" + std::to_string(i / 2) + (i % 2 ? "b" : "a");
      conv(n + ".conv", net.enc_[i].conv);
      bn(n + ".bn", net.enc_[i].bn);
    }
    for (std::size_t i = 0; i < net.bridge_.size(); ++i) {
      const std::string n = "bridge" + std::to_string(i);
      conv(n + ".conv", net.bridge_[i].conv);
      bn(n + ".bn", net.bridge_[i].bn);
    }
    for (std::size_t i = 0; i < net.dec_.size(); ++i) {
      const std::string n = "dec" + std::to_string(i);
      tconv(n + ".up", net.dec_[i].up);
      if (net.dec_[i].up_bn) bn(n + ".up_bn", *net.dec_[i].up_bn);
      conv(n + ".c1.conv", net.dec_[i].c1.conv);
      bn(n + ".c1.bn", net.dec_[i].c1.bn);
      conv(n + ".c2.conv", net.dec_[i].c2.conv);
      bn(n + ".c2.bn", net.dec_[i].c2.bn);
    }
    conv("head", net.head_);
  }

  template <typename F>
  static void for_each_bn(Network& net, F&& f) {
    for (std::size_t i = 0; i < net.enc_.size(); ++i)
      f("enc" + std::to_string(i / 2) + (i % 2 ? "b" : "a") + ".bn", net.enc_[i].bn);
    for (std::size_t i = 0; i < net.bridge_.size(); ++i)
      f("bridge" + std::to_string(i) + ".bn", net.bridge_[i].bn);
    for (std::size_t i = 0; i < net.dec_.size(); ++i) {
      if (net.dec_[i].up_bn) f("dec" + std::to_string(i) + ".up_bn", *net.dec_[i].up_bn);
      f("dec" + std::to_string(i) + ".c1.bn", net.dec_[i].c1.bn);
      f("dec" + std::to_string(i) + ".c2.bn", net.dec_[i].c2.bn);
    }
  }
};

Network Network::build(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network net;
  net.spec_ = spec;
  std::mt19937_64 rng(seed);
  // Fan-in-scaled Gaussian init, deliberately small: batch norm makes the
  // forward pass invariant to the scale of the preceding conv, while Adam
  // moves every weight by about lr per step regardless of gradient magnitude,
  // so small weights let the filter directions reorient in far fewer steps.
  constexpr double kInitScale = 0.03;
  auto make_conv = [&rng](int cin, int cout, int k, int stride, int dil, int pad) {
    Conv2d c;
    const double stddev = kInitScale * std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    c.weight = Tensor::randn(Shape4(cout, cin, k, k), rng, stddev);
    c.bias = Tensor(1, cout, 1, 1, 0.0);
    c.stride = stride;
    c.dilation = dil;
    c.pad = pad;
    return c;
  };
  auto make_tconv = [&rng](int cin, int cout, int k, int s, int p, int op) {
    TransposeConv2d c;
    const double stddev = kInitScale * std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    c.weight = Tensor::randn(Shape4(cin, cout, k, k), rng, stddev);
    c.bias = Tensor(1, cout, 1, 1, 0.0);
    c.stride = s;
    c.pad = p;
    c.output_padding = op;
    return c;
  };
  int prev = spec.in_channels;
  for (int c : spec.encoder_channels) {
    net.enc_.push_back({make_conv(prev, c, 3, 1, 1, 1), BatchNorm(c)});
    net.enc_.push_back({make_conv(c, c, 3, 1, 1, 1), BatchNorm(c)});
    prev = c;
  }
  const int d = spec.variant == Variant::AC ? 2 : 1;
  for (int b = 0; b < spec.bridge_blocks; ++b)
    net.bridge_.push_back({make_conv(prev, prev, 3, 1, d, d), BatchNorm(prev)});
  for (int i = spec.pool_depth() - 1; i >= 0; --i) {
    const int cout = spec.encoder_channels[i];
    DecoderLevel lvl;
    if (spec.variant == Variant::AC) {
      lvl.up = make_tconv(prev, cout, 5, 2, 2, 1);
      lvl.up_bn = BatchNorm(cout);
    } else {
      lvl.up = make_tconv(prev, cout, 2, 2, 0, 0);
    }
    lvl.c1 = {make_conv(2 * cout, cout, 3, 1, 1, 1), BatchNorm(cout)};
    lvl.c2 = {make_conv(cout, cout, 3, 1, 1, 1), BatchNorm(cout)};
    net.dec_.push_back(std::move(lvl));
    prev = cout;
  }
  net.head_ = make_conv(prev, spec.classes, 1, 1, 1, 0);
  return net;
}

std::vector<Network::Param> Network::params() {
  std::vector<Param> out;
  NetworkAccess::for_each_param(*this, [&](const std::string& name, Tensor& t) {
    out.push_back({name, &t});
  });
  return out;
}

Tensor Network::forward(const Tensor& x) {
  const Shape4& s = x.shape();
  if (static_cast<int>(s.c()) != spec_.in_channels)
    throw usage_error("forward: input has " + std::to_string(s.c()) +
                      " channels, spec expects " + std::to_string(spec_.in_channels));
  const std::size_t div = spec_.divisibility();
  if (s.h() == 0 || s.w() == 0 || s.h() % div != 0 || s.w() % div != 0)
    throw usage_error("forward: spatial extents of " + s.str() +
                      " must be positive multiples of " + std::to_string(div));

  tape_ = std::make_shared<Tape>();
  Tape& T = *tape_;
  auto node = [&T](Tensor v) {
    T.values.push_back(std::move(v));
    T.grads.emplace_back();
    return static_cast<long>(T.values.size()) - 1;
  };

  std::size_t pidx = 0;

  auto apply_conv = [&](Conv2d& l, long in) {
    const long out = node(conv2d_forward(l, T.values[in]));
    const std::size_t wi = pidx;
    pidx += 2;
    T.steps.push_back([lp = &l, in, out, wi](Network& net, Tape& t) {
      if (t.grads[out].numel() == 0) return;
      auto g = conv2d_backward(*lp, t.values[in], t.grads[out]);
      accum_grad(t.grads[in], g.x);
      add_inplace(net.param_grads_[wi], g.weight);
      add_inplace(net.param_grads_[wi + 1], g.bias);
    });
    return out;
  };

  auto apply_tconv = [&](TransposeConv2d& l, long in) {
    const long out = node(transpose_conv2d_forward(l, T.values[in]));
    const std::size_t wi = pidx;
    pidx += 2;
    T.steps.push_back([lp = &l, in, out, wi](Network& net, Tape& t) {
      if (t.grads[out].numel() == 0) return;
      auto g = transpose_conv2d_backward(*lp, t.values[in], t.grads[out]);
      accum_grad(t.grads[in], g.x);
      add_inplace(net.param_grads_[wi], g.weight);
      add_inplace(net.param_grads_[wi + 1], g.bias);
    });
    return out;
  };

  auto apply_bn = [&](BatchNorm& l, long in) {
    BatchNormCache cache;
    const long out = node(batchnorm_forward(l, T.values[in], train_, &cache));
    const std::size_t gi = pidx;
    pidx += 2;
    T.steps.push_back([lp = &l, cache = std::move(cache), in, out, gi](Network& net, Tape& t) {
      if (t.grads[out].numel() == 0) return;
      auto g = batchnorm_backward(*lp, cache, t.grads[out]);
      accum_grad(t.grads[in], g.x);
      add_inplace(net.param_grads_[gi], g.gamma);
      add_inplace(net.param_grads_[gi + 1], g.beta);
    });
    return out;
  };

  auto apply_relu = [&](long in) {
    const long out = node(rf_.enabled ? T.values[in] : relu(T.values[in]));
    T.steps.push_back([in, out](Network& net, Tape& t) {
      if (t.grads[out].numel() == 0) return;
      if (net.rf_.enabled)
        accum_grad(t.grads[in], t.grads[out]);
      else
        accum_grad(t.grads[in], relu_backward(t.values[in], t.grads[out]));
    });
    return out;
  };

  auto apply_pool = [&](long in) {
    MaxPoolResult r = maxpool2(T.values[in]);
    const Shape4 in_shape = T.values[in].shape();
    const long out = node(std::move(r.out));
    T.steps.push_back(
        [in, out, in_shape, argmax = std::move(r.argmax)](Network& net, Tape& t) {
          if (t.grads[out].numel() == 0) return;
          if (net.rf_.enabled) {
            // Spread uniformly over the window so the probe measures geometry,
            // not which element happened to win.
            Tensor g(in_shape);
            const Tensor& go = t.grads[out];
            const Shape4& os = go.shape();
            for (std::size_t n = 0; n < os.n(); ++n)
              for (std::size_t c = 0; c < os.c(); ++c)
                for (std::size_t oy = 0; oy < os.h(); ++oy)
                  for (std::size_t ox = 0; ox < os.w(); ++ox) {
                    const double v = go.at(n, c, oy, ox) * 0.25;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                      for (std::size_t dx = 0; dx < 2; ++dx)
                        g.at(n, c, 2 * oy + dy, 2 * ox + dx) += v;
                  }
            accum_grad(t.grads[in], g);
          } else {
            accum_grad(t.grads[in], maxpool2_backward(in_shape, argmax, t.grads[out]));
          }
        });
    return out;
  };

  auto apply_concat = [&](long a, long b) {
    const long out = node(concat_channels(T.values[a], T.values[b]));
    const std::size_t ca = T.values[a].shape().c();
    T.steps.push_back([a, b, out, ca](Network&, Tape& t) {
      if (t.grads[out].numel() == 0) return;
      const std::size_t ct = t.grads[out].shape().c();
      accum_grad(t.grads[a], slice_channels(t.grads[out], 0, ca));
      accum_grad(t.grads[b], slice_channels(t.grads[out], ca, ct));
    });
    return out;
  };

  long cur = node(x);
  T.input_node = cur;

  std::vector<long> skips;
  for (std::size_t i = 0; i < enc_.size(); i += 2) {
    cur = apply_relu(apply_bn(enc_[i].bn, apply_conv(enc_[i].conv, cur)));
    cur = apply_relu(apply_bn(enc_[i + 1].bn, apply_conv(enc_[i + 1].conv, cur)));
    skips.push_back(cur);
    cur = apply_pool(cur);
  }
  for (auto& blk : bridge_)
    cur = apply_relu(apply_bn(blk.bn, apply_conv(blk.conv, cur)));
  for (std::size_t li = 0; li < dec_.size(); ++li) {
    DecoderLevel& lvl = dec_[li];
    cur = apply_tconv(lvl.up, cur);
    if (lvl.up_bn) cur = apply_relu(apply_bn(*lvl.up_bn, cur));
    const long skip = skips[skips.size() - 1 - li];
    cur = apply_concat(skip, cur);
    cur = apply_relu(apply_bn(lvl.c1.bn, apply_conv(lvl.c1.conv, cur)));
    cur = apply_relu(apply_bn(lvl.c2.bn, apply_conv(lvl.c2.conv, cur)));
  }
  cur = apply_conv(head_, cur);
  T.logits_node = cur;

  const long probs = node(softmax_channels(T.values[cur]));
  T.probs_node = probs;
  T.softmax_step = static_cast<long>(T.steps.size());
  T.steps.push_back([cur, probs](Network&, Tape& t) {
    if (t.grads[probs].numel() == 0) return;
    accum_grad(t.grads[cur], softmax_channels_backward(t.values[probs], t.grads[probs]));
  });

  return T.values[probs];
}

const Tensor& Network::logits() const {
  if (!tape_ || tape_->logits_node < 0) throw usage_error("logits: no forward trace");
  return tape_->values[tape_->logits_node];
}

void Network::run_backward(const Tensor& grad, bool from_logits) {
  if (!tape_) throw usage_error("backward: no forward trace");
  Tape& t = *tape_;
  const long seed_node = from_logits ? t.logits_node : t.probs_node;
  if (grad.shape() != t.values[seed_node].shape())
    throw usage_error("backward: gradient shape " + grad.shape().str() +
                      " does not match output " + t.values[seed_node].shape().str());
  auto ps = params();
  param_grads_.clear();
  param_grads_.reserve(ps.size());
  for (auto& p : ps) param_grads_.emplace_back(p.value->shape());
  for (auto& g : t.grads) g = Tensor();
  t.grads[seed_node] = grad;
  for (long i = static_cast<long>(t.steps.size()) - 1; i >= 0; --i) {
    if (from_logits && i == t.softmax_step) continue;
    t.steps[i](*this, t);
  }
}

void Network::backward_from_logits(const Tensor& grad_logits) {
  run_backward(grad_logits, true);
}

void Network::backward_from_probs(const Tensor& grad_probs) {
  run_backward(grad_probs, false);
}

const Tensor& Network::input_grad() const {
  if (!tape_ || tape_->input_node < 0) throw usage_error("input_grad: no forward trace");
  return tape_->grads[tape_->input_node];
}

void Network::save_checkpoint(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream os(fs::path(dir) / "spec.cfg");
    if (!os) throw data_error("checkpoint: cannot write " + dir);
    os << spec_.to_config();
  }
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  auto& self = const_cast<Network&>(*this);
  auto dump = [&](const std::string& name, Tensor& t) {
    const std::string file = name + ".rt";
    save_rt01((fs::path(dir) / file).string(), t);
    manifest << name << "\t" << file << "\n";
  };
  NetworkAccess::for_each_param(self, dump);
  NetworkAccess::for_each_bn(self, [&](const std::string& name, BatchNorm& bn) {
    dump(name + ".running_mean", bn.running_mean);
    dump(name + ".running_var", bn.running_var);
  });
}

Network Network::load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream spec_in(fs::path(dir) / "spec.cfg");
  if (!spec_in) throw data_error("checkpoint: missing spec.cfg in " + dir);
  std::ostringstream ss;
  ss << spec_in.rdbuf();
  Network net = build(NetworkSpec::from_config(ss.str()), 0);

  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw data_error("checkpoint: missing manifest.txt in " + dir);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  while (std::getline(manifest, line)) {
    if (trim(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw data_error("checkpoint: malformed manifest line");
    entries.emplace_back(trim(line.substr(0, tab)), trim(line.substr(tab + 1)));
  }
  auto find = [&](const std::string& name) -> const std::string& {
    for (const auto& [n, f] : entries)
      if (n == name) return f;
    throw data_error("checkpoint: manifest missing entry for " + name);
  };
  auto restore = [&](const std::string& name, Tensor& t) {
    Tensor loaded = load_rt01((fs::path(dir) / find(name)).string());
    if (loaded.shape() != t.shape())
      throw data_error("checkpoint: shape mismatch for " + name + ": file " +
                       loaded.shape().str() + " vs spec " + t.shape().str());
    t = std::move(loaded);
  };
  NetworkAccess::for_each_param(net, restore);
  NetworkAccess::for_each_bn(net, [&](const std::string& name, BatchNorm& bn) {
    restore(name + ".running_mean", bn.running_mean);
    restore(name + ".running_var", bn.running_var);
  });
  return net;
}

// ---------------------------------------------------------------------------
// receptive field
// ---------------------------------------------------------------------------

namespace {

BoundingBox nonzero_box(const Tensor& grad) {
  const Shape4& s = grad.shape();
  BoundingBox box{static_cast<long>(s.h()), static_cast<long>(s.w()), -1, -1};
  for (std::size_t c = 0; c < s.c(); ++c)
    for (std::size_t y = 0; y < s.h(); ++y)
      for (std::size_t x = 0; x < s.w(); ++x)
        if (grad.at(0, c, y, x) != 0.0) {
          box.y0 = std::min(box.y0, static_cast<long>(y));
          box.x0 = std::min(box.x0, static_cast<long>(x));
          box.y1 = std::max(box.y1, static_cast<long>(y));
          box.x1 = std::max(box.x1, static_cast<long>(x));
        }
  return box;
}

}  // namespace

BoundingBox receptive_field(const Network& net, std::size_t out_y, std::size_t out_x,
                            std::size_t input_h, std::size_t input_w) {
  Network probe = net;
  probe.set_train(false);
  probe.set_rf_mode(true);
  for (auto& p : probe.params())
    for (auto& v : p.value->vec()) v = std::abs(v) + 0.01;
  NetworkAccess::for_each_bn(probe, [](const std::string&, BatchNorm& bn) {
    std::fill(bn.running_mean.vec().begin(), bn.running_mean.vec().end(), 0.0);
    std::fill(bn.running_var.vec().begin(), bn.running_var.vec().end(), 1.0);
  });
  const Tensor ones(1, probe.spec().in_channels, input_h, input_w, 1.0);
  probe.forward(ones);
  if (out_y >= input_h || out_x >= input_w)
    throw usage_error("receptive_field: output pixel out of range");
  Tensor grad(probe.logits().shape());
  grad.at(0, 0, out_y, out_x) = 1.0;
  probe.backward_from_logits(grad);
  return nonzero_box(probe.input_grad());
}

BoundingBox receptive_field(const Conv2d& layer, std::size_t out_y, std::size_t out_x,
                            std::size_t input_h, std::size_t input_w) {
  Conv2d probe = layer;
  for (auto& v : probe.weight.vec()) v = std::abs(v) + 0.01;
  const Tensor ones(1, probe.in_channels(), input_h, input_w, 1.0);
  const Tensor out = conv2d_forward(probe, ones);
  if (out_y >= out.shape().h() || out_x >= out.shape().w())
    throw usage_error("receptive_field: output pixel out of range");
  Tensor grad(out.shape());
  grad.at(0, 0, out_y, out_x) = 1.0;
  return nonzero_box(conv2d_backward(probe, ones, grad).x);
}

}  // namespace rsseg::nn
