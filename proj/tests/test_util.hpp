#ifndef RSSEG_TEST_UTIL_HPP
#define RSSEG_TEST_UTIL_HPP

#include <cmath>
#include <functional>

#include "rsseg/tensor.hpp"

namespace rsseg::testutil {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

/// Central finite difference of a scalar function with respect to one entry
/// of a tensor. `loss` must not depend on hidden state that the perturbation
/// invalidates.
inline double fd(const std::function<double()>& loss, double& x, double eps = 1e-5) {
  const double saved = x;
  x = saved + eps;
  const double up = loss();
  x = saved - eps;
  const double down = loss();
  x = saved;
  return (up - down) / (2.0 * eps);
}

/// Max relative error between an analytic gradient tensor and finite
/// differences of `loss` over every entry of `x`.
inline double max_grad_err(const std::function<double()>& loss, Tensor& x,
                           const Tensor& analytic, double eps = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i)
    worst = std::max(worst, rel_err(analytic[i], fd(loss, x[i], eps)));
  return worst;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace rsseg::testutil

#endif
