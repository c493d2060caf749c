// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of every differentiable op. The weighted
// scalarization uses fixed random weights so non-uniform output gradients
// are exercised, not just d(sum)/dx.

#include <gtest/gtest.h>

#include <functional>
#include <vector>

#include "tinynlp/gradcheck.hpp"
#include "tinynlp/tensor.hpp"

using namespace tinynlp;

namespace {

// Scalarizes op(x) against fixed weights, checks backward vs central FD.
double check_unary(const std::function<Tensor(const Tensor&)>& op, const Tensor& x0,
                   std::uint64_t seed) {
  RngStream wrng(seed ^ 0x5eed);
  Tensor y0 = [&] {
    NoGradGuard ng;
    return op(x0);
  }();
  Tensor w = Tensor::uniform(y0.shape(), wrng, -1.0, 1.0);

  Tensor x = Tensor::from_data(x0.shape(), x0.data(), true);
  Tensor loss = sum(hadamard(op(x), w));
  loss.backward();
  std::vector<double> analytic = x.grad();

  Tensor fd = finite_difference_gradient(
      [&](const Tensor& xv) { return sum(hadamard(op(xv), w)).item(); }, x0, 1e-5);
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, relative_error(analytic[i], fd.data()[i]));
  }
  return worst;
}

constexpr double kTol = 1e-4;

}  // namespace

TEST(GradCheck, FiniteDifferenceOfSumIsOnes) {
  RngStream rng(1);
  Tensor x = Tensor::uniform({2, 3}, rng, -2, 2);
  Tensor fd = finite_difference_gradient([](const Tensor& v) { return sum(v).item(); }, x);
  for (double g : fd.data()) EXPECT_NEAR(g, 1.0, 1e-9);
}

TEST(GradCheck, FiniteDifferenceOfSumOfSquares) {
  Tensor x = Tensor::from_data({1}, {3.0});
  Tensor fd = finite_difference_gradient(
      [](const Tensor& v) { return sum(hadamard(v, v)).item(); }, x, 1e-5);
  EXPECT_NEAR(fd.at(0), 6.0, 1e-8);
}

TEST(GradCheck, UnaryOps) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngStream rng(100 + seed);
    Tensor x = Tensor::uniform({4, 5}, rng, -2.0, 2.0);
    EXPECT_LT(check_unary([](const Tensor& v) { return sigmoid(v); }, x, seed), kTol);
    EXPECT_LT(check_unary([](const Tensor& v) { return tanh(v); }, x, seed), kTol);
    EXPECT_LT(check_unary([](const Tensor& v) { return gelu(v); }, x, seed), kTol);
    EXPECT_LT(check_unary([](const Tensor& v) { return affine(v, -1.0, 1.0); }, x, seed), kTol);
    EXPECT_LT(check_unary([](const Tensor& v) { return softmax(v, 1); }, x, seed), kTol);
    EXPECT_LT(check_unary([](const Tensor& v) { return softmax(v, 0); }, x, seed), kTol);
    EXPECT_LT(check_unary([](const Tensor& v) { return transpose(v); }, x, seed), kTol);
    EXPECT_LT(check_unary([](const Tensor& v) { return mean(v); }, x, seed), kTol);
  }
}

TEST(GradCheck, BinaryOpsBothSides) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngStream rng(200 + seed);
    Tensor a = Tensor::uniform({3, 4}, rng, -2, 2);
    Tensor b = Tensor::uniform({4, 6}, rng, -2, 2);
    Tensor c = Tensor::uniform({3, 4}, rng, -2, 2);
    Tensor bias = Tensor::uniform({4}, rng, -1, 1);

    EXPECT_LT(check_unary([&](const Tensor& v) { return matmul(v, b); }, a, seed), kTol);
    EXPECT_LT(check_unary([&](const Tensor& v) { return matmul(a, v); }, b, seed), kTol);
    EXPECT_LT(check_unary([&](const Tensor& v) { return add(v, c); }, a, seed), kTol);
    EXPECT_LT(check_unary([&](const Tensor& v) { return sub(c, v); }, a, seed), kTol);
    EXPECT_LT(check_unary([&](const Tensor& v) { return hadamard(v, c); }, a, seed), kTol);
    EXPECT_LT(check_unary([&](const Tensor& v) { return add_bias(v, bias); }, a, seed), kTol);
    EXPECT_LT(check_unary([&](const Tensor& v) { return add_bias(a, v); }, bias, seed), kTol);
  }
}

TEST(GradCheck, CrossEntropy) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngStream rng(300 + seed);
    Tensor logits = Tensor::uniform({4, 5}, rng, -2, 2);
    std::vector<int> labels{1, 0, 4, 2};
    Tensor x = Tensor::from_data(logits.shape(), logits.data(), true);
    cross_entropy(x, labels).backward();
    std::vector<double> analytic = x.grad();
    Tensor fd = finite_difference_gradient(
        [&](const Tensor& v) { return cross_entropy(v, labels).item(); }, logits, 1e-5);
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      EXPECT_LT(relative_error(analytic[i], fd.data()[i]), kTol);
    }
  }
}

TEST(GradCheck, LayerNorm) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngStream rng(400 + seed);
    Tensor x = Tensor::uniform({3, 6}, rng, -2, 2);
    Tensor g = Tensor::uniform({6}, rng, 0.5, 1.5);
    Tensor b = Tensor::uniform({6}, rng, -0.5, 0.5);
    EXPECT_LT(check_unary([&](const Tensor& v) { return layer_norm(v, g, b); }, x, seed), kTol);
    EXPECT_LT(check_unary([&](const Tensor& v) { return layer_norm(x, v, b); }, g, seed), kTol);
    EXPECT_LT(check_unary([&](const Tensor& v) { return layer_norm(x, g, v); }, b, seed), kTol);
  }
}

TEST(GradCheck, GatherSliceConcat) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngStream rng(500 + seed);
    Tensor x = Tensor::uniform({5, 4}, rng, -2, 2);
    std::vector<int> idx{0, 3, 3, 1};
    std::vector<int> ids{2, 0, 4, 4, 1};
    Tensor other = Tensor::uniform({2, 4}, rng, -2, 2);

    EXPECT_LT(check_unary([&](const Tensor& v) { return row_gather(v, idx); }, x, seed), kTol);
    EXPECT_LT(check_unary([&](const Tensor& v) { return embedding_lookup(v, ids); }, x, seed),
              kTol);
    EXPECT_LT(check_unary([&](const Tensor& v) { return col_slice(v, 1, 3); }, x, seed), kTol);
    EXPECT_LT(check_unary(
                  [&](const Tensor& v) {
                    std::vector<Tensor> parts{v, other};
                    return concat_rows(parts);
                  },
                  x, seed),
              kTol);
    EXPECT_LT(check_unary(
                  [&](const Tensor& v) {
                    std::vector<Tensor> parts{v, x};
                    return concat_cols(parts);
                  },
                  x, seed),
              kTol);
  }
}

TEST(GradCheck, DropoutWithReplayedMask) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngStream rng(600 + seed);
    Tensor x = Tensor::uniform({4, 4}, rng, 0.5, 2.0);
    auto masked = [seed](const Tensor& v) {
      RngStream mask_rng(900 + seed);  // same mask every evaluation
      return dropout(v, 0.4, true, mask_rng);
    };
    EXPECT_LT(check_unary(masked, x, seed), kTol);
  }
}

TEST(GradCheck, RandomCompositeGraph) {
  // sum(softmax(tanh(x W1) W2, axis 1) * w) exercises chained backward.
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    RngStream rng(700 + seed);
    Tensor x0 = Tensor::uniform({3, 4}, rng, -1, 1);
    Tensor w1 = Tensor::uniform({4, 5}, rng, -1, 1);
    Tensor w2 = Tensor::uniform({5, 4}, rng, -1, 1);
    Tensor w = Tensor::uniform({3, 4}, rng, -1, 1);

    auto f = [&](const Tensor& v) {
      return sum(hadamard(softmax(matmul(tanh(matmul(v, w1)), w2), 1), w)).item();
    };
    Tensor x = Tensor::from_data(x0.shape(), x0.data(), true);
    sum(hadamard(softmax(matmul(tanh(matmul(x, w1)), w2), 1), w)).backward();
    Tensor fd = finite_difference_gradient(f, x0, 1e-5);
    for (std::size_t i = 0; i < x.grad().size(); ++i) {
      EXPECT_LT(relative_error(x.grad()[i], fd.data()[i]), kTol);
    }
  }
}
