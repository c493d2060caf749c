// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over dense row-major double tensors.
//
// Every differentiable operation the models need lives here. Ops build a
// tape of nodes; Tensor::backward() runs the tape in reverse topological
// order and accumulates gradients additively, so a tensor used twice
// receives the sum of both contributions. Values are immutable once a
// forward pass has consumed them; only grad slots mutate during backward.
//
// Broadcasting is deliberately restricted to a trailing-dimension bias add
// (add_bias). Everything else requires exact shape agreement.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_set>
#include <vector>

#include "tinynlp/common.hpp"

namespace tinynlp {

// Thread-local switch: with grad mode off, ops skip tape construction and
// results carry no history. Used for evaluation and finite differences.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

struct NoGradGuard {
  NoGradGuard() : prev_(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until backward (or a caller) touches it
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;  // pushes this->grad into parents' grads
};

inline std::size_t numel_of(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + format_shape(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline void ensure_grad(TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false) {
    if (numel_of(shape) != data.size()) {
      throw ShapeError("shape " + format_shape(shape) + " does not match data length " +
                       std::to_string(data.size()));
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    std::vector<double> d(numel_of(shape), 0.0);
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor full(std::vector<int> shape, double v, bool requires_grad = false) {
    std::vector<double> d(numel_of(shape), v);
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor scalar(double v) { return from_data({1}, {v}); }

  /// Gaussian fill, row-major draw order.
  static Tensor randn(std::vector<int> shape, RngStream& rng, double mean = 0.0,
                      double stddev = 1.0, bool requires_grad = false) {
    std::vector<double> d(numel_of(shape));
    for (auto& x : d) x = mean + stddev * rng.next_gaussian();
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor uniform(std::vector<int> shape, RngStream& rng, double lo, double hi,
                        bool requires_grad = false) {
    std::vector<double> d(numel_of(shape));
    for (auto& x : d) x = lo + (hi - lo) * rng.next_double();
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  int dim(std::size_t i) const { return node_->shape[i]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }

  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }

  std::vector<double>& grad() {
    ensure_grad(*node_);
    return node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  void clear_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  double item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + format_shape(shape()));
    return node_->value[0];
  }

  double at(int i) const { return node_->value[static_cast<std::size_t>(i)]; }
  double at(int i, int j) const {
    return node_->value[static_cast<std::size_t>(i) * static_cast<std::size_t>(node_->shape[1]) +
                        static_cast<std::size_t>(j)];
  }

  const std::shared_ptr<TensorNode>& node() const { return node_; }

  /// Reverse-mode pass from a scalar loss. Gradients accumulate additively
  /// into every reachable requires_grad tensor.
  void backward() const;

 private:
  std::shared_ptr<TensorNode> node_;
};

inline void Tensor::backward() const {
  if (!node_) throw ContractError("backward on an undefined tensor");
  if (size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + format_shape(shape()));
  }
  // Iterative DFS postorder: producers land before consumers.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      TensorNode* p = n->parents[next].get();
      ++next;
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  ensure_grad(*node_);
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop();
  }
}

/// Clears the grad slot of every node reachable from `root`. Needed when a
/// retained graph is backpropagated more than once and accumulation is not
/// wanted.
inline void clear_graph_grads(const Tensor& root) {
  if (!root.defined()) return;
  std::unordered_set<TensorNode*> seen;
  std::vector<TensorNode*> stack{root.node().get()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    TensorNode* n = stack.back();
    stack.pop_back();
    n->grad.clear();
    for (const auto& p : n->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
}

// ------------------------------------------------------------- kernels

namespace detail {

// C (m x n) += A (m x k) * B (k x n)
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* A,
                    const double* B, double* C) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    double* c = C + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = a[t];
      const double* b = B + t * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C (m x k) += A (m x n) * B^T, with B stored (k x n)
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* A,
                    const double* B, double* C) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * n;
    double* c = C + i * k;
    for (std::size_t j = 0; j < k; ++j) {
      const double* b = B + j * n;
      double acc = 0.0;
      for (std::size_t t = 0; t < n; ++t) acc += a[t] * b[t];
      c[j] += acc;
    }
  }
}

// C (k x n) += A^T * B, with A stored (m x k), B stored (m x n)
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* A,
                    const double* B, double* C) {
  for (std::size_t t = 0; t < m; ++t) {
    const double* a = A + t * k;
    const double* b = B + t * n;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = a[i];
      double* c = C + i * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + format_shape(a.shape()) + " and " +
                     format_shape(b.shape()) + " do not match");
  }
}

inline Tensor make_node(std::vector<int> shape, std::vector<double> value,
                        std::initializer_list<Tensor> parents) {
  Tensor out = Tensor::from_data(std::move(shape), std::move(value));
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    out.node()->requires_grad = true;
    for (const auto& p : parents) out.node()->parents.push_back(p.node());
  }
  return out;
}

// Unary elementwise helper: f fills value, df returns local derivative
// from (x_i, y_i).
template <class F, class DF>
Tensor unary_elementwise(const Tensor& x, F f, DF df) {
  std::vector<double> v(x.size());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(xd[i]);
  Tensor out = make_node(x.shape(), std::move(v), {x});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* xn = x.node().get();
    out.node()->backprop = [on, xn, df] {
      ensure_grad(*xn);
      for (std::size_t i = 0; i < on->value.size(); ++i) {
        xn->grad[i] += df(xn->value[i], on->value[i]) * on->grad[i];
      }
    };
  }
  return out;
}

}  // namespace detail

// ----------------------------------------------------------------- ops

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + format_shape(a.shape()) + " and " +
                     format_shape(b.shape()));
  }
  const std::size_t m = static_cast<std::size_t>(a.dim(0));
  const std::size_t k = static_cast<std::size_t>(a.dim(1));
  const std::size_t n = static_cast<std::size_t>(b.dim(1));
  std::vector<double> v(m * n, 0.0);
  detail::gemm_nn(m, k, n, a.data().data(), b.data().data(), v.data());
  Tensor out = detail::make_node({a.dim(0), b.dim(1)}, std::move(v), {a, b});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* an = a.node().get();
    auto* bn = b.node().get();
    out.node()->backprop = [on, an, bn, m, k, n] {
      if (an->requires_grad) {
        ensure_grad(*an);
        detail::gemm_nt(m, n, k, on->grad.data(), bn->value.data(), an->grad.data());
      }
      if (bn->requires_grad) {
        ensure_grad(*bn);
        detail::gemm_tn(m, k, n, an->value.data(), on->grad.data(), bn->grad.data());
      }
    };
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + format_shape(a.shape()));
  const std::size_t m = static_cast<std::size_t>(a.dim(0));
  const std::size_t n = static_cast<std::size_t>(a.dim(1));
  std::vector<double> v(m * n);
  const auto& ad = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) v[j * m + i] = ad[i * n + j];
  }
  Tensor out = detail::make_node({a.dim(1), a.dim(0)}, std::move(v), {a});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* an = a.node().get();
    out.node()->backprop = [on, an, m, n] {
      ensure_grad(*an);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += on->grad[j * m + i];
      }
    };
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  Tensor out = detail::make_node(a.shape(), std::move(v), {a, b});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* an = a.node().get();
    auto* bn = b.node().get();
    out.node()->backprop = [on, an, bn] {
      if (an->requires_grad) {
        ensure_grad(*an);
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        ensure_grad(*bn);
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
      }
    };
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  Tensor out = detail::make_node(a.shape(), std::move(v), {a, b});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* an = a.node().get();
    auto* bn = b.node().get();
    out.node()->backprop = [on, an, bn] {
      if (an->requires_grad) {
        ensure_grad(*an);
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        ensure_grad(*bn);
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
      }
    };
  }
  return out;
}

/// Hadamard (elementwise) product.
inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "hadamard");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  Tensor out = detail::make_node(a.shape(), std::move(v), {a, b});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* an = a.node().get();
    auto* bn = b.node().get();
    out.node()->backprop = [on, an, bn] {
      if (an->requires_grad) {
        ensure_grad(*an);
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += bn->value[i] * on->grad[i];
      }
      if (bn->requires_grad) {
        ensure_grad(*bn);
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += an->value[i] * on->grad[i];
      }
    };
  }
  return out;
}

/// The one permitted broadcast: x[..., K] + bias[K] over the trailing axis.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const int k = x.dim(x.rank() - 1);
  const bool bias_ok = (bias.rank() == 1 && bias.dim(0) == k) ||
                       (bias.rank() == 2 && bias.dim(0) == 1 && bias.dim(1) == k);
  if (!bias_ok) {
    throw ShapeError("add_bias: bias " + format_shape(bias.shape()) +
                     " does not match trailing dimension of " + format_shape(x.shape()));
  }
  const std::size_t rows = x.size() / static_cast<std::size_t>(k);
  std::vector<double> v(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * static_cast<std::size_t>(k);
    double* vr = v.data() + r * static_cast<std::size_t>(k);
    for (int j = 0; j < k; ++j) vr[j] = xr[j] + bias.data()[static_cast<std::size_t>(j)];
  }
  Tensor out = detail::make_node(x.shape(), std::move(v), {x, bias});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* xn = x.node().get();
    auto* bn = bias.node().get();
    const std::size_t kk = static_cast<std::size_t>(k);
    out.node()->backprop = [on, xn, bn, rows, kk] {
      if (xn->requires_grad) {
        ensure_grad(*xn);
        for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        ensure_grad(*bn);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = on->grad.data() + r * kk;
          for (std::size_t j = 0; j < kk; ++j) bn->grad[j] += g[j];
        }
      }
    };
  }
  return out;
}

/// Elementwise y = mul * x + shift with scalar constants.
inline Tensor affine(const Tensor& x, double mul, double shift) {
  return detail::unary_elementwise(
      x, [mul, shift](double v) { return mul * v + shift; },
      [mul](double, double) { return mul; });
}

inline Tensor scale(const Tensor& x, double c) { return affine(x, c, 0.0); }

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_elementwise(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary_elementwise(x, [](double v) { return std::tanh(v); },
                                   [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary_elementwise(x, [](double v) { return v > 0 ? v : 0.0; },
                                   [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

/// Exact GELU, x * Phi(x) with the Gaussian CDF.
inline Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return detail::unary_elementwise(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

/// Max-subtracted softmax along `axis`; outputs sum to one along that axis.
inline Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                     format_shape(x.shape()));
  }
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
  const std::size_t L = static_cast<std::size_t>(shape[static_cast<std::size_t>(axis)]);

  std::vector<double> v(x.size());
  const auto& xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * L * inner + in;
      double mx = xd[base];
      for (std::size_t l = 1; l < L; ++l) mx = std::max(mx, xd[base + l * inner]);
      double sum = 0.0;
      for (std::size_t l = 0; l < L; ++l) {
        const double e = std::exp(xd[base + l * inner] - mx);
        v[base + l * inner] = e;
        sum += e;
      }
      for (std::size_t l = 0; l < L; ++l) v[base + l * inner] /= sum;
    }
  }
  Tensor out = detail::make_node(x.shape(), std::move(v), {x});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* xn = x.node().get();
    out.node()->backprop = [on, xn, outer, inner, L] {
      ensure_grad(*xn);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * L * inner + in;
          double dot = 0.0;
          for (std::size_t l = 0; l < L; ++l) {
            const std::size_t idx = base + l * inner;
            dot += on->grad[idx] * on->value[idx];
          }
          for (std::size_t l = 0; l < L; ++l) {
            const std::size_t idx = base + l * inner;
            xn->grad[idx] += on->value[idx] * (on->grad[idx] - dot);
          }
        }
      }
    };
  }
  return out;
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = detail::make_node({1}, {s}, {x});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* xn = x.node().get();
    out.node()->backprop = [on, xn] {
      ensure_grad(*xn);
      for (auto& g : xn->grad) g += on->grad[0];
    };
  }
  return out;
}

inline Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  return scale(sum(x), inv);
}

/// Mean negative log softmax probability of the true class.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: expected [batch x classes] logits, got " +
                     format_shape(logits.shape()));
  }
  const std::size_t n = static_cast<std::size_t>(logits.dim(0));
  const std::size_t k = static_cast<std::size_t>(logits.dim(1));
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw LabelError("cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                       std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  const auto& xd = logits.data();
  std::vector<double> probs(n * k);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xd.data() + i * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = std::exp(row[j] - mx);
      probs[i * k + j] = e;
      sum += e;
    }
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= sum;
    loss += std::log(sum) + mx - row[static_cast<std::size_t>(labels[i])];
  }
  loss /= static_cast<double>(n);
  Tensor out = detail::make_node({1}, {loss}, {logits});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* xn = logits.node().get();
    std::vector<int> lab(labels.begin(), labels.end());
    out.node()->backprop = [on, xn, probs = std::move(probs), lab = std::move(lab), n, k] {
      ensure_grad(*xn);
      const double g = on->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double onehot = (static_cast<std::size_t>(lab[i]) == j) ? 1.0 : 0.0;
          xn->grad[i * k + j] += g * (probs[i * k + j] - onehot);
        }
      }
    };
  }
  return out;
}

/// Inverted dropout: zero with probability `rate`, scale survivors by
/// 1/(1-rate) in training; identity in eval mode. One uniform per element,
/// row-major order.
inline Tensor dropout(const Tensor& x, double rate, bool training, RngStream& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + repr(rate));
  }
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = rng.next_double() < rate ? 0.0 : keep_scale;
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] * mask[i];
  Tensor out = detail::make_node(x.shape(), std::move(v), {x});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* xn = x.node().get();
    out.node()->backprop = [on, xn, mask = std::move(mask)] {
      ensure_grad(*xn);
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += mask[i] * on->grad[i];
    };
  }
  return out;
}

/// Per-row layer normalization over the trailing axis, then gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-12) {
  const int k = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || gain.dim(0) != k || bias.rank() != 1 || bias.dim(0) != k) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(k) + "], got " +
                     format_shape(gain.shape()) + " and " + format_shape(bias.shape()));
  }
  const std::size_t kk = static_cast<std::size_t>(k);
  const std::size_t rows = x.size() / kk;
  std::vector<double> v(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  const auto& xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * kk;
    double mu = 0.0;
    for (std::size_t j = 0; j < kk; ++j) mu += row[j];
    mu /= static_cast<double>(kk);
    double var = 0.0;
    for (std::size_t j = 0; j < kk; ++j) {
      const double d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(kk);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < kk; ++j) {
      const double h = (row[j] - mu) * inv;
      xhat[r * kk + j] = h;
      v[r * kk + j] = h * gain.data()[j] + bias.data()[j];
    }
  }
  Tensor out = detail::make_node(x.shape(), std::move(v), {x, gain, bias});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* xn = x.node().get();
    auto* gn = gain.node().get();
    auto* bn = bias.node().get();
    out.node()->backprop = [on, xn, gn, bn, xhat = std::move(xhat),
                            inv_std = std::move(inv_std), rows, kk] {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* dy = on->grad.data() + r * kk;
        const double* h = xhat.data() + r * kk;
        if (gn->requires_grad) {
          ensure_grad(*gn);
          for (std::size_t j = 0; j < kk; ++j) gn->grad[j] += dy[j] * h[j];
        }
        if (bn->requires_grad) {
          ensure_grad(*bn);
          for (std::size_t j = 0; j < kk; ++j) bn->grad[j] += dy[j];
        }
        if (xn->requires_grad) {
          ensure_grad(*xn);
          double mean_dxhat = 0.0, mean_dxhat_h = 0.0;
          for (std::size_t j = 0; j < kk; ++j) {
            const double dxhat = dy[j] * gn->value[j];
            mean_dxhat += dxhat;
            mean_dxhat_h += dxhat * h[j];
          }
          mean_dxhat /= static_cast<double>(kk);
          mean_dxhat_h /= static_cast<double>(kk);
          double* dx = xn->grad.data() + r * kk;
          for (std::size_t j = 0; j < kk; ++j) {
            const double dxhat = dy[j] * gn->value[j];
            dx[j] += inv_std[r] * (dxhat - mean_dxhat - h[j] * mean_dxhat_h);
          }
        }
      }
    };
  }
  return out;
}

/// Rows of `table` selected by integer id; backward scatter-adds into the
/// table gradient.
inline Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) {
    throw ShapeError("embedding_lookup: table must be [vocab x dim], got " +
                     format_shape(table.shape()));
  }
  const int vocab = table.dim(0);
  const std::size_t dim = static_cast<std::size_t>(table.dim(1));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw ContractError("embedding_lookup: id " + std::to_string(ids[i]) + " at position " +
                          std::to_string(i) + " outside [0, " + std::to_string(vocab) + ")");
    }
  }
  std::vector<double> v(ids.size() * dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* src = table.data().data() + static_cast<std::size_t>(ids[i]) * dim;
    std::copy(src, src + dim, v.data() + i * dim);
  }
  Tensor out = detail::make_node({static_cast<int>(ids.size()), table.dim(1)}, std::move(v),
                                 {table});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* tn = table.node().get();
    std::vector<int> idx(ids.begin(), ids.end());
    out.node()->backprop = [on, tn, idx = std::move(idx), dim] {
      ensure_grad(*tn);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* g = on->grad.data() + i * dim;
        double* dst = tn->grad.data() + static_cast<std::size_t>(idx[i]) * dim;
        for (std::size_t j = 0; j < dim; ++j) dst[j] += g[j];
      }
    };
  }
  return out;
}

/// Output row i = x row indices[i]; duplicates allowed, backward
/// scatter-adds.
inline Tensor row_gather(const Tensor& x, std::span<const int> indices) {
  if (x.rank() != 2) {
    throw ShapeError("row_gather: expected rank 2, got " + format_shape(x.shape()));
  }
  const int rows = x.dim(0);
  const std::size_t cols = static_cast<std::size_t>(x.dim(1));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= rows) {
      throw ContractError("row_gather: index " + std::to_string(indices[i]) + " at position " +
                          std::to_string(i) + " outside [0, " + std::to_string(rows) + ")");
    }
  }
  std::vector<double> v(indices.size() * cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const double* src = x.data().data() + static_cast<std::size_t>(indices[i]) * cols;
    std::copy(src, src + cols, v.data() + i * cols);
  }
  Tensor out = detail::make_node({static_cast<int>(indices.size()), x.dim(1)}, std::move(v), {x});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* xn = x.node().get();
    std::vector<int> idx(indices.begin(), indices.end());
    out.node()->backprop = [on, xn, idx = std::move(idx), cols] {
      ensure_grad(*xn);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* g = on->grad.data() + i * cols;
        double* dst = xn->grad.data() + static_cast<std::size_t>(idx[i]) * cols;
        for (std::size_t j = 0; j < cols; ++j) dst[j] += g[j];
      }
    };
  }
  return out;
}

/// Same data, new shape; gradient passes through untouched.
inline Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (numel_of(shape) != x.size()) {
    throw ShapeError("reshape: " + format_shape(x.shape()) + " cannot become " +
                     format_shape(shape));
  }
  Tensor out = detail::make_node(std::move(shape), x.data(), {x});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* xn = x.node().get();
    out.node()->backprop = [on, xn] {
      ensure_grad(*xn);
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    };
  }
  return out;
}

/// Vertical stack of same-width matrices.
inline Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int cols = parts[0].dim(1);
  int rows = 0;
  bool needs = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != cols) {
      throw ShapeError("concat_rows: shape " + format_shape(p.shape()) +
                       " does not share width with " + format_shape(parts[0].shape()));
    }
    rows += p.dim(0);
    needs = needs || p.requires_grad();
  }
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  for (const auto& p : parts) v.insert(v.end(), p.data().begin(), p.data().end());
  Tensor out = Tensor::from_data({rows, cols}, std::move(v));
  if (grad_enabled() && needs) {
    out.node()->requires_grad = true;
    for (const auto& p : parts) out.node()->parents.push_back(p.node());
    auto* on = out.node().get();
    std::vector<TensorNode*> ps;
    for (const auto& p : parts) ps.push_back(p.node().get());
    out.node()->backprop = [on, ps = std::move(ps)] {
      std::size_t offset = 0;
      for (auto* p : ps) {
        const std::size_t n = p->value.size();
        if (p->requires_grad) {
          ensure_grad(*p);
          for (std::size_t i = 0; i < n; ++i) p->grad[i] += on->grad[offset + i];
        }
        offset += n;
      }
    };
  }
  return out;
}

/// Columns [c0, c1) of x.
inline Tensor col_slice(const Tensor& x, int c0, int c1) {
  if (x.rank() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1) {
    throw ShapeError("col_slice: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                     ") invalid for shape " + format_shape(x.shape()));
  }
  const std::size_t rows = static_cast<std::size_t>(x.dim(0));
  const std::size_t cols = static_cast<std::size_t>(x.dim(1));
  const std::size_t w = static_cast<std::size_t>(c1 - c0);
  std::vector<double> v(rows * w);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = x.data().data() + r * cols + static_cast<std::size_t>(c0);
    std::copy(src, src + w, v.data() + r * w);
  }
  Tensor out = detail::make_node({x.dim(0), c1 - c0}, std::move(v), {x});
  if (out.requires_grad()) {
    auto* on = out.node().get();
    auto* xn = x.node().get();
    const std::size_t off = static_cast<std::size_t>(c0);
    out.node()->backprop = [on, xn, rows, cols, w, off] {
      ensure_grad(*xn);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* g = on->grad.data() + r * w;
        double* dst = xn->grad.data() + r * cols + off;
        for (std::size_t j = 0; j < w; ++j) dst[j] += g[j];
      }
    };
  }
  return out;
}

/// Horizontal concatenation of same-height matrices.
inline Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int rows = parts[0].dim(0);
  int cols = 0;
  bool needs = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) {
      throw ShapeError("concat_cols: shape " + format_shape(p.shape()) +
                       " does not share height with " + format_shape(parts[0].shape()));
    }
    cols += p.dim(1);
    needs = needs || p.requires_grad();
  }
  std::vector<double> v(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  std::size_t coff = 0;
  for (const auto& p : parts) {
    const std::size_t w = static_cast<std::size_t>(p.dim(1));
    for (std::size_t r = 0; r < static_cast<std::size_t>(rows); ++r) {
      std::copy(p.data().data() + r * w, p.data().data() + (r + 1) * w,
                v.data() + r * static_cast<std::size_t>(cols) + coff);
    }
    coff += w;
  }
  Tensor out = Tensor::from_data({rows, cols}, std::move(v));
  if (grad_enabled() && needs) {
    out.node()->requires_grad = true;
    for (const auto& p : parts) out.node()->parents.push_back(p.node());
    auto* on = out.node().get();
    std::vector<TensorNode*> ps;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
      ps.push_back(p.node().get());
      widths.push_back(static_cast<std::size_t>(p.dim(1)));
    }
    const std::size_t rr = static_cast<std::size_t>(rows);
    const std::size_t cc = static_cast<std::size_t>(cols);
    out.node()->backprop = [on, ps = std::move(ps), widths = std::move(widths), rr, cc] {
      std::size_t coff2 = 0;
      for (std::size_t pi = 0; pi < ps.size(); ++pi) {
        auto* p = ps[pi];
        const std::size_t w = widths[pi];
        if (p->requires_grad) {
          ensure_grad(*p);
          for (std::size_t r = 0; r < rr; ++r) {
            const double* g = on->grad.data() + r * cc + coff2;
            double* dst = p->grad.data() + r * w;
            for (std::size_t j = 0; j < w; ++j) dst[j] += g[j];
          }
        }
        coff2 += w;
      }
    };
  }
  return out;
}

}  // namespace tinynlp
