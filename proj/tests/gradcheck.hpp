#pragma once

#include "polyreg/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace testing {

using polyreg::ad::Shape;
using polyreg::ad::Tensor;

inline Tensor random_param(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(polyreg::ad::element_count(shape));
  for (double& x : v) x = u(rng);
  return Tensor::parameter(std::move(shape), std::move(v));
}

/// sum_i w_i y_i as a graph op, so any tensor output can be checked through a scalar.
inline Tensor weighted_sum(const Tensor& y, const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * y.values()[i];
  return polyreg::ad::make_result({}, {s}, {y.ptr()}, [w](polyreg::ad::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < w.size(); ++i) g[i] += self.grad[0] * w[i];
  });
}

/// Largest |analytic - central difference| over an input, divided by the
/// largest |central difference| of that input (at least `min_scale`). h = 1e-5.
inline double max_relative_error(const std::function<Tensor()>& scalar_fn, std::vector<Tensor> inputs,
                                 double min_scale = 1e-12) {
  for (Tensor& t : inputs) t.zero_grad();
  polyreg::ad::backward(scalar_fn());
  double worst = 0.0;
  const double h = 1e-5;
  for (Tensor& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<double> numeric(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double keep = t.values()[i];
      t.mutable_values()[i] = keep + h;
      const double up = scalar_fn().item();
      t.mutable_values()[i] = keep - h;
      const double down = scalar_fn().item();
      t.mutable_values()[i] = keep;
      numeric[i] = (up - down) / (2 * h);
    }
    double scale = 0.0;
    double diff = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      scale = std::max(scale, std::abs(numeric[i]));
      diff = std::max(diff, std::abs(numeric[i] - analytic[i]));
    }
    worst = std::max(worst, diff / std::max(scale, min_scale));
  }
  return worst;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace testing
