// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient oracle. Evaluates the target function forward
// only, so it stays independent of the backward implementation it checks.

#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "tinynlp/tensor.hpp"

namespace tinynlp {

/// (f(x + h e_i) - f(x - h e_i)) / 2h per element. f must be deterministic.
inline Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                         const Tensor& x, double h = 1e-5) {
  NoGradGuard ng;
  std::vector<double> g(x.size());
  std::vector<double> base = x.data();
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus = base;
    plus[i] += h;
    std::vector<double> minus = base;
    minus[i] -= h;
    const double fp = f(Tensor::from_data(x.shape(), std::move(plus)));
    const double fm = f(Tensor::from_data(x.shape(), std::move(minus)));
    g[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor::from_data(x.shape(), std::move(g));
}

/// |a-b| / max(|a|, |b|, floor). The floor keeps near-zero gradients from
/// blowing up the ratio while still catching sign and scale bugs.
inline double relative_error(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Perturbs every element of every listed parameter in place, re-evaluating
/// `loss_fn`, and compares against the supplied analytic gradients. Returns
/// the worst relative error seen.
inline double max_gradient_error(const std::function<double()>& loss_fn,
                                 std::span<Tensor> params,
                                 std::span<const std::vector<double>> analytic,
                                 double h = 1e-5) {
  NoGradGuard ng;
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& data = params[pi].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double fp = loss_fn();
      data[i] = keep - h;
      const double fm = loss_fn();
      data[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      worst = std::max(worst, relative_error(analytic[pi][i], fd));
    }
  }
  return worst;
}

}  // namespace tinynlp
