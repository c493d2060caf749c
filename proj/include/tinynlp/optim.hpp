// SPDX-License-Identifier: Apache-2.0
//
// Adam with bias correction. Each parameter owns its own moment arrays and
// step counter, so an optimizer shared across task heads only advances the
// slots whose parameters actually received a gradient this step.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tinynlp/tensor.hpp"

namespace tinynlp {

struct AdamState {
  std::int64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One Adam update for a single parameter. Moment arrays are allocated on
/// first use and must match the parameter length afterwards.
inline void adam_step(Tensor& param, std::span<const double> grad, AdamState& state) {
  const std::size_t n = param.size();
  if (state.first_moment.empty()) state.first_moment.assign(n, 0.0);
  if (state.second_moment.empty()) state.second_moment.assign(n, 0.0);
  if (grad.size() != n || state.first_moment.size() != n || state.second_moment.size() != n) {
    throw StateError("adam_step: parameter length " + std::to_string(n) +
                     " does not match grad length " + std::to_string(grad.size()) +
                     " or state lengths " + std::to_string(state.first_moment.size()) + "/" +
                     std::to_string(state.second_moment.size()));
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto& p = param.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    state.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * g;
    state.second_moment[i] = state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.first_moment[i] / bc1;
    const double v_hat = state.second_moment[i] / bc2;
    p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

/// Optimizer over a fixed parameter list. step() touches exactly the
/// parameters whose grad is populated and clears those grads afterwards;
/// parameters outside the current graph keep their values and moments
/// bitwise intact.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8)
      : params_(std::move(params)) {
    states_.resize(params_.size());
    for (auto& s : states_) {
      s.lr = lr;
      s.beta1 = beta1;
      s.beta2 = beta2;
      s.epsilon = epsilon;
    }
  }

  void set_lr(double lr) {
    for (auto& s : states_) s.lr = lr;
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      adam_step(params_[i], params_[i].grad(), states_[i]);
      params_[i].clear_grad();
    }
  }

  void clear_grads() {
    for (auto& p : params_) p.clear_grad();
  }

  std::size_t size() const { return params_.size(); }
  const Tensor& param(std::size_t i) const { return params_[i]; }
  AdamState& state(std::size_t i) { return states_[i]; }
  const AdamState& state(std::size_t i) const { return states_[i]; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
};

}  // namespace tinynlp
