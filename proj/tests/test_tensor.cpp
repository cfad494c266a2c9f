#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <unordered_set>

#include "bwssl/conv.hpp"
#include "bwssl/ops.hpp"
#include "support.hpp"

using namespace bwssl;
using bwssl::testing::grad_check;
using bwssl::testing::random_away_from_zero;
using bwssl::testing::random_projection;
using bwssl::testing::random_tensor;
using Td = Tensor<double>;

TEST(Elementwise, ReluClampsNegatives) {
  auto y = relu(Td::vector({-1, 0, 2}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{0, 0, 2}));
}

TEST(Elementwise, MulProductRule) {
  auto a = Td::vector({1, 2}).set_requires_grad(true);
  auto b = Td::vector({3, 4}).set_requires_grad(true);
  auto y = mul(a, b);
  EXPECT_EQ(y[0], 3);
  EXPECT_EQ(y[1], 8);
  backward(sum_all(y));
  EXPECT_EQ(a.grad()[0], 3);
  EXPECT_EQ(a.grad()[1], 4);
  EXPECT_EQ(b.grad()[0], 1);
  EXPECT_EQ(b.grad()[1], 2);
}

TEST(Elementwise, SqrtGradient) {
  auto x = Td::scalar(4).set_requires_grad(true);
  backward(bwssl::sqrt(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);  // 1 / (2 * sqrt(4))
}

TEST(Elementwise, SignedSqrtKeepsSign) {
  auto y = signed_sqrt(Td::vector({-4, 0, 9}));
  EXPECT_EQ(y[0], -2);
  EXPECT_EQ(y[1], 0);
  EXPECT_EQ(y[2], 3);
}

TEST(Elementwise, ShapeMismatchThrows) {
  EXPECT_THROW(add(Td(Shape{2, 3}), Td(Shape{2})), ShapeError);
  EXPECT_THROW(mul(Td(Shape{4}), Td(Shape{3})), ShapeError);
}

TEST(Elementwise, TrailingAxisBroadcast) {
  auto a = Td::matrix(2, 2, {1, 2, 3, 4}).set_requires_grad(true);
  auto b = Td::vector({10, 20}).set_requires_grad(true);
  auto y = add(a, b);
  EXPECT_EQ(y[3], 24);
  backward(sum_all(y));
  EXPECT_EQ(b.grad()[0], 2);
  EXPECT_EQ(b.grad()[1], 2);
}

TEST(Elementwise, DivisionUnderflowIsClampedAndCounted) {
  warnings().reset();
  auto y = div(Td::vector({1}), Td::vector({0}));
  EXPECT_TRUE(std::isfinite(y[0]));
  EXPECT_GE(warnings().division_clamps.load(), 1u);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  using Fn = std::function<Td(const Td&, const Td&)>;
  const std::vector<std::pair<const char*, Fn>> binary = {
      {"add", [](const Td& a, const Td& b) { return add(a, b); }},
      {"sub", [](const Td& a, const Td& b) { return sub(a, b); }},
      {"mul", [](const Td& a, const Td& b) { return mul(a, b); }},
      {"div", [](const Td& a, const Td& b) { return div(a, b); }},
  };
  for (const auto& [name, op] : binary) {
    auto a = random_away_from_zero({3, 4}, rng);
    auto b = random_away_from_zero({4}, rng);
    auto r = grad_check([&, op = op](auto& in) { return random_projection(op(in[0], in[1]), 5); }, {a, b});
    EXPECT_LE(r.max_relative_error, 1e-6) << name;
  }
  using UFn = std::function<Td(const Td&)>;
  const std::vector<std::pair<const char*, UFn>> unary = {
      {"square", [](const Td& a) { return square(a); }},
      {"relu", [](const Td& a) { return relu(a); }},
      {"exp", [](const Td& a) { return bwssl::exp(a); }},
      {"signed_sqrt", [](const Td& a) { return signed_sqrt(a); }},
      {"sqrt", [](const Td& a) { return bwssl::sqrt(square(a)); }},
      {"log", [](const Td& a) { return bwssl::log(square(a)); }},
  };
  for (const auto& [name, op] : unary) {
    auto a = random_away_from_zero({2, 3, 2}, rng);
    auto r = grad_check([&, op = op](auto& in) { return random_projection(op(in[0]), 9); }, {a});
    EXPECT_LE(r.max_relative_error, 1e-6) << name;
  }
}

TEST(Matmul, IdentityAndDotProduct) {
  auto i2 = Td::matrix(2, 2, {1, 0, 0, 1});
  auto m = Td::matrix(2, 2, {1, 2, 3, 4});
  auto p = matmul(i2, m);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(p[i], m[i]);
  EXPECT_EQ(matmul(Td::matrix(1, 2, {1, 2}), Td::matrix(2, 1, {3, 4})).item(), 11);
}

TEST(Matmul, DimensionMismatchThrows) {
  EXPECT_THROW(matmul(Td(Shape{2, 3}), Td(Shape{2, 3})), ShapeError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto a = random_tensor({5, 4}, rng);
  auto b = random_tensor({4, 3}, rng);
  auto r = grad_check([](auto& in) { return random_projection(matmul(in[0], in[1]), 1); }, {a, b});
  EXPECT_LE(r.max_relative_error, 1e-6);
}

TEST(Conv2d, OneByOneIdentityKernel) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({2, 3, 4, 4}, rng, -1, 1, false);
  Td k(Shape{3, 3, 1, 1}, 0.0);
  for (std::size_t c = 0; c < 3; ++c) k.mutable_data()[c * 3 + c] = 1.0;
  auto y = conv2d(x, k);
  EXPECT_EQ(bwssl::testing::max_abs_diff(y.data(), x.data()), 0.0);
}

TEST(Conv2d, AllOnesKernelSums) {
  auto x = Td(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  auto k = Td(Shape{1, 1, 2, 2}, 1.0);
  auto y = conv2d(x, k);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 10);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(17);
  for (std::size_t groups : {1u, 2u}) {
    for (auto algo : {ConvAlgo::direct, ConvAlgo::im2col}) {
      for (std::size_t stride : {1u, 2u}) {
        auto x = random_tensor({2, 4, 5, 5}, rng);
        auto k = random_tensor({4, 4 / groups, 3, 3}, rng);
        auto y = conv2d(x, k, {stride, 1, groups, algo});
        const auto expect = bwssl::testing::conv_oracle(x, k, stride, 1, groups);
        ASSERT_EQ(y.numel(), expect.size());
        EXPECT_LE(bwssl::testing::max_abs_diff(y.data(), expect), 1e-10);
      }
    }
  }
}

TEST(Conv2d, Im2colBackwardMatchesDirect) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 4, 6, 6}, rng);
  auto k = random_tensor({6, 2, 3, 3}, rng);
  std::vector<double> gx[2], gk[2];
  int i = 0;
  for (auto algo : {ConvAlgo::direct, ConvAlgo::im2col}) {
    x.zero_grad();
    k.zero_grad();
    backward(random_projection(conv2d(x, k, {2, 1, 2, algo}), 4));
    gx[i] = x.grad_or_zero();
    gk[i] = k.grad_or_zero();
    ++i;
  }
  EXPECT_LE(bwssl::testing::max_abs_diff(gx[0], gx[1]), 1e-12);
  EXPECT_LE(bwssl::testing::max_abs_diff(gk[0], gk[1]), 1e-12);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  auto x = random_tensor({2, 2, 5, 5}, rng);
  auto k = random_tensor({4, 1, 3, 3}, rng);
  auto r = grad_check(
      [](auto& in) { return random_projection(conv2d(in[0], in[1], {2, 1, 2, ConvAlgo::im2col}), 2); }, {x, k});
  EXPECT_LE(r.max_relative_error, 1e-6);
}

TEST(Conv2d, InvalidGroupsAreConfigurationErrors) {
  EXPECT_THROW(conv2d(Td(Shape{1, 3, 4, 4}), Td(Shape{4, 1, 1, 1}), {1, 0, 2}), ConfigError);
  EXPECT_THROW(conv2d(Td(Shape{1, 4, 4, 4}), Td(Shape{3, 2, 1, 1}), {1, 0, 2}), ConfigError);
}

TEST(Reduce, MeanAndSum) {
  EXPECT_EQ(mean_all(Td::vector({1, 2, 3})).item(), 2);
  auto s = sum(Td::matrix(2, 2, {1, 2, 3, 4}), {0});
  EXPECT_EQ(s[0], 4);
  EXPECT_EQ(s[1], 6);
}

TEST(Reduce, MeanBackwardDistributesEvenly) {
  auto x = Td::vector({1, 2, 3, 4}).set_requires_grad(true);
  backward(mean_all(x));
  for (auto g : x.grad()) EXPECT_EQ(g, 0.25);
}

TEST(Reduce, MaxRoutesGradientToArgmax) {
  auto x = Td::matrix(2, 3, {1, 5, 2, 7, 0, 3}).set_requires_grad(true);
  auto m = reduce(ReduceKind::max, x, {1});
  EXPECT_EQ(m[0], 5);
  EXPECT_EQ(m[1], 7);
  backward(sum_all(m));
  EXPECT_EQ(x.grad_or_zero(), (std::vector<double>{0, 1, 0, 1, 0, 0}));
}

TEST(Reduce, EmptyAxisThrows) {
  EXPECT_THROW(sum(Td(Shape{0, 3}), {0}), ShapeError);
  EXPECT_THROW(sum(Td(Shape{2, 3}), {2}), ShapeError);
}

TEST(StopGradient, ForwardIdentity) {
  auto y = stop_gradient(Td::vector({1, 2, 3}));
  EXPECT_EQ(y[0], 1);
  EXPECT_EQ(y[2], 3);
}

TEST(StopGradient, OnlyTheLiveFactorContributes) {
  auto x = Td::scalar(3).set_requires_grad(true);
  backward(mul(stop_gradient(x), x));
  EXPECT_EQ(x.grad()[0], 3);
}

TEST(StopGradient, UpstreamParametersGetExactZero) {
  std::mt19937_64 rng(2);
  auto w1 = random_tensor({3, 3}, rng);
  auto w2 = random_tensor({3, 3}, rng);
  auto x = random_tensor({4, 3}, rng, -1, 1, false);
  auto h = relu(matmul(x, w1));
  auto loss = sum_all(square(matmul(stop_gradient(h), w2)));
  backward(loss);
  for (auto g : w1.grad_or_zero()) EXPECT_EQ(g, 0.0);
  EXPECT_TRUE(w2.has_grad());
}

TEST(Backward, SquareAtThree) {
  auto x = Td::scalar(3).set_requires_grad(true);
  backward(square(x));
  EXPECT_EQ(x.grad()[0], 6);
}

TEST(Backward, NonScalarLossThrows) {
  auto x = Td::vector({1, 2}).set_requires_grad(true);
  EXPECT_THROW(backward(x), ShapeError);
}

TEST(Backward, TwoLossesAccumulate) {
  std::mt19937_64 rng(4);
  auto w = random_tensor({3, 2}, rng);
  auto x = random_tensor({5, 3}, rng, -1, 1, false);
  auto l1 = [&] { return sum_all(square(matmul(x, w))); };
  auto l2 = [&] { return sum_all(bwssl::exp(matmul(x, w))); };
  backward(l1());
  const auto g1 = w.grad_or_zero();
  w.zero_grad();
  backward(l2());
  const auto g2 = w.grad_or_zero();
  w.zero_grad();
  backward(l1());
  backward(l2());
  const auto g12 = w.grad_or_zero();
  for (std::size_t i = 0; i < g12.size(); ++i) EXPECT_NEAR(g12[i], g1[i] + g2[i], 1e-12);
}

TEST(Backward, ConvReluMeanMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  auto x = random_tensor({2, 3, 6, 6}, rng);
  auto k = random_tensor({4, 3, 3, 3}, rng);
  auto r = grad_check([](auto& in) { return mean_all(relu(conv2d(in[0], in[1], {1, 1, 1}))); }, {x, k}, 1e-5);
  EXPECT_LE(r.max_relative_error, 1e-4);
}

TEST(Tape, TopologicalOrderAndSingleVisit) {
  std::mt19937_64 rng(6);
  auto a = random_tensor({2, 2}, rng);
  auto b = random_tensor({2, 2}, rng);
  auto c = matmul(a, b);
  auto d = add(c, c);  // shared input
  auto loss = sum_all(mul(d, c));
  auto tape = Tape<double>::record(loss);
  std::unordered_set<const void*> seen;
  for (const auto& n : tape.nodes()) {
    EXPECT_TRUE(seen.insert(n.id()).second) << "node recorded twice";
    if (n.grad_fn()) {
      for (const auto& in : n.grad_fn()->inputs) {
        if (in.requires_grad()) {
          EXPECT_TRUE(seen.count(in.id())) << "input after consumer";
        }
      }
    }
  }
  EXPECT_TRUE(tape.nodes().back().same(loss));
}

TEST(Determinism, RepeatedForwardIsBitwiseIdentical) {
  auto run = [] {
    std::mt19937_64 rng(99);
    auto x = random_tensor({2, 3, 8, 8}, rng);
    auto k = random_tensor({5, 3, 3, 3}, rng);
    return conv2d(relu(x), k, {2, 1, 1}).clone();
  };
  auto a = run();
  auto b = run();
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]);
}
