#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "agf/tensor.hpp"

namespace agf::test {

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) { return max_abs_diff(a.data(), b.data()); }

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Autodiff gradient of `loss_fn` against central differences with step h,
// over every element of every leaf. Returns the largest relative error.
inline double gradient_error(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                             double h = 1e-5) {
  Tape::current().reset();
  for (auto& t : leaves) t.clear_grad();
  backward(loss_fn());

  double worst = 0.0;
  NoGradGuard guard;
  for (auto& t : leaves) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + h;
      const double up = loss_fn().item();
      w[i] = orig - h;
      const double down = loss_fn().item();
      w[i] = orig;
      worst = std::max(worst, rel_error(analytic[i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace agf::test
