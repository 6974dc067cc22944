#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "rehar/autograd.hpp"
#include "rehar/error.hpp"
#include "test_support.hpp"

using namespace rehar;
using rehar::testing::random_tensor;

namespace {

constexpr double kTolerance = 1e-4;
constexpr std::uint64_t kSeeds = 10;

// Contracts a tensor-valued node with fixed random weights so every output
// entry contributes to the scalar.
NodeId contract(Graph& g, NodeId out, std::uint64_t seed) {
  const Tensor w = random_tensor(g.value(out).shape(), seed + 1000, 0.5, 1.5);
  return sum(g, mul(g, out, g.constant(w)));
}

// Keeps values away from 0 so ReLU kinks sit outside the FD stencil.
Tensor away_from_zero(Tensor t) {
  for (double& v : t.data()) v = v < 0 ? v - 0.1 : v + 0.1;
  return t;
}

}  // namespace

TEST(Tensor, RejectsMismatchedValues) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor(Shape{2, 0}), ShapeError);
  EXPECT_EQ(Tensor::filled({2, 2}, 3.0).values(), std::vector<double>(4, 3.0));
}

TEST(Tensor, GradBufferFollowsRequiresGrad) {
  Tensor t({3});
  EXPECT_FALSE(t.has_grad());
  t.set_requires_grad(true);
  ASSERT_TRUE(t.has_grad());
  EXPECT_EQ(t.grad().size(), 3u);
  t.set_requires_grad(false);
  EXPECT_FALSE(t.has_grad());
}

TEST(Autograd, ElementwiseOpsMatchFiniteDifferences) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const Tensor x = random_tensor({4, 3}, s);
    const Tensor other = random_tensor({4, 3}, s + 77);
    auto check = [&](const char* name, const ScalarBuilder& b, const Tensor& at) {
      EXPECT_LT(check_gradients(b, at), kTolerance) << name << " seed " << s;
    };
    check("add", [&](Graph& g, NodeId p) { return contract(g, add(g, p, g.constant(other)), s); }, x);
    check("sub", [&](Graph& g, NodeId p) { return contract(g, sub(g, g.constant(other), p), s); }, x);
    check("mul", [&](Graph& g, NodeId p) { return contract(g, mul(g, p, g.constant(other)), s); }, x);
    check("mul self", [&](Graph& g, NodeId p) { return contract(g, mul(g, p, p), s); }, x);
    check("scale", [&](Graph& g, NodeId p) { return contract(g, scale(g, p, -2.5), s); }, x);
    check("sigmoid", [&](Graph& g, NodeId p) { return contract(g, sigmoid(g, p), s); }, x);
    check("tanh", [&](Graph& g, NodeId p) { return contract(g, tanh(g, p), s); }, x);
    check("relu", [&](Graph& g, NodeId p) { return contract(g, relu(g, p), s); }, away_from_zero(x));
    check("sum", [&](Graph& g, NodeId p) { return sum(g, mul(g, p, p)); }, x);
  }
}

TEST(Autograd, IndexingOpsMatchFiniteDifferences) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const Tensor x = random_tensor({9}, s);
    EXPECT_LT(check_gradients([&](Graph& g, NodeId p) { return contract(g, slice(g, p, 2, 5), s); }, x), kTolerance);
    EXPECT_LT(check_gradients([&](Graph& g, NodeId p) { return tanh(g, pick(g, p, 4)); }, x), kTolerance);
  }
}

TEST(Autograd, VecMatMatchesFiniteDifferencesInBothArguments) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const Tensor x = random_tensor({5}, s);
    const Tensor w = random_tensor({5, 4}, s + 9);
    EXPECT_LT(check_gradients([&](Graph& g, NodeId p) { return contract(g, vecmat(g, p, g.constant(w)), s); }, x),
              kTolerance);
    EXPECT_LT(check_gradients([&](Graph& g, NodeId p) { return contract(g, vecmat(g, g.constant(x), p), s); }, w),
              kTolerance);
  }
}

TEST(Autograd, Conv2dMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const Tensor in = random_tensor({6, 5, 2}, s);
    const Tensor k = random_tensor({3, 3, 2, 3}, s + 1);
    const Tensor b = random_tensor({3}, s + 2);
    for (Padding pad : {Padding::Same, Padding::Valid}) {
      EXPECT_LT(check_gradients(
                    [&](Graph& g, NodeId p) {
                      return contract(g, conv2d(g, p, g.constant(k), g.constant(b), pad), s);
                    },
                    in),
                kTolerance);
      EXPECT_LT(check_gradients(
                    [&](Graph& g, NodeId p) {
                      return contract(g, conv2d(g, g.constant(in), p, g.constant(b), pad), s);
                    },
                    k),
                kTolerance);
      EXPECT_LT(check_gradients(
                    [&](Graph& g, NodeId p) {
                      return contract(g, conv2d(g, g.constant(in), g.constant(k), p, pad), s);
                    },
                    b),
                kTolerance);
    }
  }
}

TEST(Autograd, PoolingMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const Tensor in = random_tensor({4, 6, 3}, s);
    EXPECT_LT(check_gradients([&](Graph& g, NodeId p) { return contract(g, max_pool2d(g, p), s); }, in), kTolerance);
    EXPECT_LT(check_gradients([&](Graph& g, NodeId p) { return contract(g, global_avg_pool(g, p), s); }, in),
              kTolerance);
    EXPECT_LT(check_gradients([&](Graph& g, NodeId p) { return contract(g, global_max_pool(g, p), s); }, in),
              kTolerance);
  }
}

TEST(Autograd, SoftmaxCrossEntropyMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const Tensor z = random_tensor({6}, s, -3.0, 3.0);
    EXPECT_LT(check_gradients([&](Graph& g, NodeId p) { return contract(g, softmax(g, p), s); }, z), kTolerance);
    EXPECT_LT(check_gradients([&](Graph& g, NodeId p) { return cross_entropy(g, softmax(g, p), s % 6); }, z),
              kTolerance);
  }
}

TEST(Autograd, LstmStepMatchesFiniteDifferences) {
  constexpr std::size_t D = 3, U = 4;
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const Tensor wx = random_tensor({D, 4 * U}, s, -0.5, 0.5);
    const Tensor wh = random_tensor({U, 4 * U}, s + 1, -0.5, 0.5);
    const Tensor b = random_tensor({4 * U}, s + 2, -0.5, 0.5);
    const Tensor x0 = random_tensor({D}, s + 3), x1 = random_tensor({D}, s + 4);
    // Two steps from zero state so the recurrent kernel sees a non-zero h.
    auto run = [&](Graph& g, NodeId pwx, NodeId pwh, NodeId pb) {
      LstmNodes n{pwx, pwh, pb};
      LstmState st{g.constant(Tensor({U})), g.constant(Tensor({U}))};
      st = lstm_cell_step(g, g.constant(x0), st, n);
      st = lstm_cell_step(g, g.constant(x1), st, n);
      return contract(g, add(g, st.h, st.c), s);
    };
    EXPECT_LT(check_gradients([&](Graph& g, NodeId p) { return run(g, p, g.constant(wh), g.constant(b)); }, wx),
              kTolerance);
    EXPECT_LT(check_gradients([&](Graph& g, NodeId p) { return run(g, g.constant(wx), p, g.constant(b)); }, wh),
              kTolerance);
    EXPECT_LT(check_gradients([&](Graph& g, NodeId p) { return run(g, g.constant(wx), g.constant(wh), p); }, b),
              kTolerance);
  }
}

TEST(Autograd, SharedNodeAccumulatesGradient) {
  Graph g;
  const NodeId x = g.variable(Tensor::vector({2.0, -1.0}));
  const NodeId y = sum(g, add(g, mul(g, x, x), scale(g, x, 3.0)));
  g.backward(y);
  const auto gr = g.grad(x);
  EXPECT_DOUBLE_EQ(gr[0], 2 * 2.0 + 3.0);
  EXPECT_DOUBLE_EQ(gr[1], 2 * -1.0 + 3.0);
}

TEST(Autograd, ConstantsCarryNoGradient) {
  Graph g;
  const NodeId c = g.constant(Tensor::vector({1.0, 2.0}));
  const NodeId v = g.variable(Tensor::vector({3.0, 4.0}));
  g.backward(sum(g, mul(g, c, v)));
  EXPECT_TRUE(g.grad(c).empty());
  EXPECT_EQ(g.grad(v)[1], 2.0);
}

TEST(Autograd, BackwardRequiresScalarOutput) {
  Graph g;
  const NodeId v = g.variable(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(g.backward(v), ShapeError);
}

TEST(Autograd, ShapeMismatchesAreRejected) {
  Graph g;
  const NodeId a = g.constant(Tensor({2}));
  const NodeId b = g.constant(Tensor({3}));
  EXPECT_THROW(add(g, a, b), ShapeError);
  EXPECT_THROW(vecmat(g, a, g.constant(Tensor({3, 2}))), ShapeError);
  EXPECT_THROW(max_pool2d(g, g.constant(Tensor({3, 4, 1}))), ShapeError);
  EXPECT_THROW(conv2d(g, g.constant(Tensor({4, 4, 2})), g.constant(Tensor({3, 3, 1, 2})), g.constant(Tensor({2})),
                      Padding::Same),
               ShapeError);
  EXPECT_THROW(slice(g, b, 2, 2), ShapeError);
}

TEST(Autograd, SoftmaxMatchesExponentialRatio) {
  const std::vector<double> z{0.5, -1.25, 3.0, 0.0};
  double denom = 0.0;
  for (double v : z) denom += std::exp(v);
  const auto p = softmax_values(z);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(p[i], std::exp(z[i]) / denom, 1e-15);
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-15);
}

TEST(Autograd, SoftmaxIsStableForLargeLogits) {
  const auto p = softmax_values(std::vector<double>{1000.0, 1000.0, -1000.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
  EXPECT_EQ(p[2], 0.0);
}

TEST(Autograd, CrossEntropyClampsZeroProbability) {
  Graph g;
  const NodeId p = g.constant(Tensor::vector({1.0, 0.0}));
  EXPECT_NEAR(g.value(cross_entropy(g, p, 1)).item(), -std::log(kProbabilityFloor), 1e-9);
}

TEST(Autograd, CrossEntropyRejectsNonDistribution) {
  Graph g;
  const NodeId p = g.constant(Tensor::vector({0.6, 0.6}));
  EXPECT_THROW(cross_entropy(g, p, 0), Error);
}

TEST(Autograd, MaxPoolTieRoutesGradientToFirstCell) {
  Graph g;
  const NodeId x = g.variable(Tensor::filled({2, 2, 1}, 1.0));
  g.backward(sum(g, max_pool2d(g, x)));
  const auto gr = g.grad(x);
  EXPECT_EQ(std::vector<double>(gr.begin(), gr.end()), (std::vector<double>{1.0, 0.0, 0.0, 0.0}));
}

TEST(Autograd, GradCheckFlagsAWrongGradient) {
  // A deliberately broken op: forward x^2, backward claims 3x.
  const ScalarBuilder broken = [](Graph& g, NodeId p) {
    Tensor v = g.value(p);
    for (double& e : v.data()) e = e * e;
    const NodeId out = g.record(OpKind::Mul, {p}, std::move(v), [](Graph& gg, NodeId self, std::span<const double> og) {
      const NodeId in = gg.inputs(self)[0];
      auto acc = gg.grad_accumulator(in);
      const auto& x = gg.value(in);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += og[i] * 3.0 * x[i];
    });
    return sum(g, out);
  };
  EXPECT_GT(check_gradients(broken, Tensor::vector({0.7, -0.3})), 0.1);
}
