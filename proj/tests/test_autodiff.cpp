#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <memory>

#include "biasloss/errors.hpp"
#include "biasloss/graph.hpp"
#include "biasloss/ops.hpp"
#include "test_util.hpp"

using namespace biasloss;
using testutil::random_tensor;

TEST(Tensor, ZeroFill) {
  Tensor<float> t({2, 2}, 0.0f);
  EXPECT_EQ(t.shape(), (Shape{2, 2}));
  for (float v : t.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Tensor, DataPassthrough) {
  Tensor<double> t({3}, std::vector<double>{1, 2, 3});
  EXPECT_EQ(t[0], 1.0);
  EXPECT_EQ(t[1], 2.0);
  EXPECT_EQ(t[2], 3.0);
}

TEST(Tensor, LengthMismatchThrows) {
  EXPECT_THROW(Tensor<double>({2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, ScalarIsRankZero) {
  auto s = Tensor<double>::scalar(4.5);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_EQ(s.size(), 1u);
  EXPECT_EQ(s.item(), 4.5);
}

TEST(Tensor, ReshapeKeepsDataAndChecksCount) {
  Tensor<float> t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r[5], 6.0f);
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Unfold, RowMajorRows) {
  Tensor<double> t({2, 1, 2, 2}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  auto v = unfold(t);
  ASSERT_EQ(v.rows, 2u);
  ASSERT_EQ(v.cols, 4u);
  EXPECT_EQ(std::vector<double>(v.row(0).begin(), v.row(0).end()), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(std::vector<double>(v.row(1).begin(), v.row(1).end()), (std::vector<double>{5, 6, 7, 8}));
  EXPECT_EQ(v.data.data(), t.ptr());
}

TEST(Unfold, Singleton) {
  Tensor<double> t({1, 1, 1, 1}, std::vector<double>{9});
  auto v = unfold(t);
  EXPECT_EQ(v.rows, 1u);
  EXPECT_EQ(v.cols, 1u);
  EXPECT_EQ(v.row(0)[0], 9.0);
}

TEST(Unfold, RejectsRankTwo) {
  Tensor<double> t({2, 3});
  EXPECT_THROW(unfold(t), ShapeError);
}

TEST(Graph, AddForward) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>::scalar(2));
  auto b = g.constant(Tensor<double>::scalar(3));
  EXPECT_EQ(g.forward(ops::add(g, a, b)).item(), 5.0);
}

TEST(Graph, ReluOfNegativeIsZero) {
  Graph<double> g;
  auto x = g.constant(Tensor<double>::scalar(-1));
  EXPECT_EQ(g.forward(ops::relu(g, x)).item(), 0.0);
}

TEST(Graph, UnsetLeafIsUninitialized) {
  Graph<double> g;
  auto x = g.input("x");
  auto y = ops::exp(g, x);
  EXPECT_THROW(g.forward(y), UninitializedError);
}

TEST(Graph, CycleRejected) {
  Graph<double> g;
  auto x = g.constant(Tensor<double>::scalar(1));
  auto a = ops::exp(g, x);
  auto b = ops::exp(g, a);
  g.replace_input(a, 0, b);
  EXPECT_THROW(g.forward(b), GraphError);
}

TEST(Graph, SquareGradient) {
  Graph<double> g;
  auto x = g.parameter(Tensor<double>::scalar(3), "x");
  auto y = ops::mul(g, x, x);
  g.forward(y);
  EXPECT_EQ(g.backward(y).at(x).item(), 6.0);
}

TEST(Graph, ReluSubgradient) {
  Graph<double> g;
  auto x = g.parameter(Tensor<double>({2}, std::vector<double>{-1, 2}), "x");
  auto y = ops::sum(g, ops::relu(g, x));
  g.forward(y);
  const auto grads = g.backward(y);
  const auto& gx = grads.at(x);
  EXPECT_EQ(gx[0], 0.0);
  EXPECT_EQ(gx[1], 1.0);
}

TEST(Graph, NonScalarRootRejected) {
  Graph<double> g;
  auto x = g.parameter(Tensor<double>({2}, 1.0), "x");
  auto y = ops::exp(g, x);
  g.forward(y);
  EXPECT_THROW(g.backward(y), ContractError);
}

TEST(Graph, UnreachedParameterGetsZeroGradient) {
  Graph<double> g;
  auto x = g.parameter(Tensor<double>::scalar(2), "x");
  auto unused = g.parameter(Tensor<double>({3}, 5.0), "unused");
  auto y = ops::mul(g, x, x);
  g.forward(y);
  auto grads = g.backward(y);
  ASSERT_TRUE(grads.contains(unused));
  EXPECT_EQ(grads.at(unused), Tensor<double>({3}, 0.0));
}

TEST(Graph, GradientShapesMatchValues) {
  Graph<double> g;
  auto a = g.parameter(random_tensor<double>({3, 4}, 1), "a");
  auto b = g.parameter(random_tensor<double>({4}, 2), "b");
  auto y = ops::sum(g, ops::mul(g, ops::exp(g, a), b));
  g.forward(y);
  auto grads = g.backward(y);
  EXPECT_EQ(grads.at(a).shape(), g.value(a).shape());
  EXPECT_EQ(grads.at(b).shape(), g.value(b).shape());
}

TEST(Graph, ForwardIsReferentiallyTransparent) {
  Graph<double> g;
  auto a = g.parameter(random_tensor<double>({5, 6}, 3), "a");
  auto w = g.constant(random_tensor<double>({6, 2}, 4));
  auto y = ops::mean(g, ops::hard_swish(g, ops::matmul(g, a, w)));
  const Tensor<double> first = g.forward(y);
  const Tensor<double> second = g.forward(y);
  EXPECT_EQ(first, second);
}

TEST(Graph, DetachBlocksGradient) {
  Graph<double> g;
  auto x = g.parameter(random_tensor<double>({4}, 5), "x");
  auto d = ops::detach(g, ops::exp(g, x));
  auto y = ops::sum(g, ops::mul(g, d, d));
  g.forward(y);
  EXPECT_EQ(g.value(d), g.forward(ops::exp(g, x)));
  EXPECT_FALSE(g.requires_grad(d));
  auto grads = g.backward(y);
  EXPECT_EQ(grads.at(x), Tensor<double>({4}, 0.0));
}

TEST(Graph, DetachContributesNothingAlongsideLivePath) {
  Graph<double> g;
  auto x = g.parameter(random_tensor<double>({4}, 6), "x");
  auto y = ops::sum(g, ops::mul(g, ops::detach(g, x), x));
  g.forward(y);
  auto grads = g.backward(y);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(grads.at(x)[i], g.value(x)[i]);
}

TEST(Graph, ValidateFlagTrapsNonFinite) {
  Graph<double> g;
  g.set_validate(true);
  auto x = g.constant(Tensor<double>::scalar(-1));
  EXPECT_THROW(g.forward(ops::log(g, x)), NumericalError);
}

TEST(Broadcast, ShapeRules) {
  EXPECT_EQ(ops::broadcast_shape({3, 1}, {4}), (Shape{3, 4}));
  EXPECT_EQ(ops::broadcast_shape({2, 3, 4}, {3, 1}), (Shape{2, 3, 4}));
  EXPECT_EQ(ops::broadcast_shape({}, {5}), (Shape{5}));
  EXPECT_THROW(ops::broadcast_shape({3}, {4}), ShapeError);
}

TEST(Broadcast, AddValues) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>({2, 1}, std::vector<double>{10, 20}));
  auto b = g.constant(Tensor<double>({3}, std::vector<double>{1, 2, 3}));
  const auto& y = g.forward(ops::add(g, a, b));
  EXPECT_EQ(y, Tensor<double>({2, 3}, std::vector<double>{11, 12, 13, 21, 22, 23}));
}

TEST(Ops, HardSwishAnchors) {
  Graph<double> g;
  auto x = g.constant(Tensor<double>({3}, std::vector<double>{0, 3, -3}));
  const auto& y = g.forward(ops::hard_swish(g, x));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 3.0);
  EXPECT_EQ(y[2], 0.0);
}

TEST(Ops, MatmulAgainstLoop) {
  Graph<double> g;
  auto a = random_tensor<double>({3, 5}, 8);
  auto b = random_tensor<double>({5, 4}, 9);
  const auto& y = g.forward(ops::matmul(g, g.constant(a), g.constant(b)));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 5; ++k) acc += a[i * 5 + k] * b[k * 4 + j];
      EXPECT_NEAR(y[i * 4 + j], acc, 1e-12 * std::max(1.0, std::abs(acc)));
    }
}

TEST(Ops, FlattenUsesRuntimeBatch) {
  Graph<double> g;
  auto x = g.input("x");
  auto y = ops::flatten(g, x);
  g.set_value(x, Tensor<double>({3, 2, 2, 1}, 1.0));
  EXPECT_EQ(g.forward(y).shape(), (Shape{3, 4}));
  g.set_value(x, Tensor<double>({5, 2, 2, 1}, 1.0));
  EXPECT_EQ(g.forward(y).shape(), (Shape{5, 4}));
}

// Reductions against scalar loops.

namespace {

Tensor<double> loop_reduce(const Tensor<double>& x, std::size_t axis, const std::string& kind) {
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) os.push_back(s[i]);
  Tensor<double> out(os);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      double acc = kind == "max" ? -INFINITY : kind == "min" ? INFINITY : 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double v = x[(o * n + k) * inner + in];
        if (kind == "max") acc = std::max(acc, v);
        else if (kind == "min") acc = std::min(acc, v);
        else acc += v;
      }
      if (kind == "mean") acc /= static_cast<double>(n);
      out[o * inner + in] = acc;
    }
  return out;
}

}  // namespace

TEST(Reductions, AxisAgreesWithLoopOracle) {
  const auto x = random_tensor<double>({3, 4, 5}, 10);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Graph<double> g;
    auto xn = g.constant(x);
    const auto s = g.forward(ops::sum(g, xn, axis));
    const auto m = g.forward(ops::mean(g, xn, axis));
    const auto mx = g.forward(ops::max(g, xn, axis));
    const auto mn = g.forward(ops::min(g, xn, axis));
    EXPECT_LE(testutil::max_rel_diff(s, loop_reduce(x, axis, "sum")), 1e-12);
    EXPECT_LE(testutil::max_rel_diff(m, loop_reduce(x, axis, "mean")), 1e-12);
    EXPECT_EQ(mx, loop_reduce(x, axis, "max"));
    EXPECT_EQ(mn, loop_reduce(x, axis, "min"));
  }
}

TEST(Reductions, FullAndKeepdim) {
  const auto x = random_tensor<double>({4, 6}, 11);
  double sum = 0, mx = -INFINITY, mn = INFINITY;
  for (double v : x.data()) {
    sum += v;
    mx = std::max(mx, v);
    mn = std::min(mn, v);
  }
  Graph<double> g;
  auto xn = g.constant(x);
  EXPECT_LE(testutil::rel_diff(g.forward(ops::sum(g, xn)).item(), sum), 1e-12);
  EXPECT_LE(testutil::rel_diff(g.forward(ops::mean(g, xn)).item(), sum / 24.0), 1e-12);
  EXPECT_EQ(g.forward(ops::max(g, xn)).item(), mx);
  EXPECT_EQ(g.forward(ops::min(g, xn)).item(), mn);
  EXPECT_EQ(g.forward(ops::sum(g, xn, 1, true)).shape(), (Shape{4, 1}));
}

TEST(Reductions, MaxRoutesGradientToFirstExtremum) {
  Graph<double> g;
  auto x = g.parameter(Tensor<double>({4}, std::vector<double>{1, 5, 5, 2}), "x");
  auto y = ops::max(g, x);
  g.forward(y);
  EXPECT_EQ(g.backward(y).at(x), Tensor<double>({4}, std::vector<double>{0, 1, 0, 0}));
}

// Finite-difference checks for every differentiable primitive.

namespace {

using UnaryBuilder = std::function<NodeId(Graph<double>&, NodeId)>;

void expect_unary_grad(const UnaryBuilder& build, const Shape& shape, std::uint64_t stream, double lo = -2.0,
                       double hi = 2.0) {
  Graph<double> g;
  auto x = g.parameter(random_tensor<double>(shape, stream, lo, hi), "x");
  auto y = build(g, x);
  g.forward(y);
  // Random projection makes every output entry matter.
  auto r = g.constant(random_tensor<double>(g.value(y).shape(), stream + 1000));
  auto root = ops::sum(g, ops::mul(g, y, r));
  const auto check = testutil::check_gradients(g, root, {x});
  EXPECT_LE(check.worst_rel, 1e-4);
  EXPECT_LE(check.worst_entry, 1e-4);
}

using BinaryBuilder = std::function<NodeId(Graph<double>&, NodeId, NodeId)>;

void expect_binary_grad(const BinaryBuilder& build, const Shape& sa, const Shape& sb, std::uint64_t stream,
                        double blo = -2.0, double bhi = 2.0) {
  Graph<double> g;
  auto a = g.parameter(random_tensor<double>(sa, stream), "a");
  auto b = g.parameter(random_tensor<double>(sb, stream + 1, blo, bhi), "b");
  auto y = build(g, a, b);
  g.forward(y);
  auto r = g.constant(random_tensor<double>(g.value(y).shape(), stream + 1000));
  auto root = ops::sum(g, ops::mul(g, y, r));
  const auto check = testutil::check_gradients(g, root, {a, b});
  EXPECT_LE(check.worst_rel, 1e-4);
  EXPECT_LE(check.worst_entry, 1e-4);
}

}  // namespace

TEST(GradCheck, ElementwiseBinaryWithBroadcast) {
  expect_binary_grad([](auto& g, auto a, auto b) { return ops::add(g, a, b); }, {3, 4}, {4}, 20);
  expect_binary_grad([](auto& g, auto a, auto b) { return ops::sub(g, a, b); }, {3, 1}, {2, 3, 4}, 22);
  expect_binary_grad([](auto& g, auto a, auto b) { return ops::mul(g, a, b); }, {2, 3, 4}, {3, 1}, 24);
  expect_binary_grad([](auto& g, auto a, auto b) { return ops::div(g, a, b); }, {3, 4}, {3, 4}, 26, 0.5, 2.0);
}

TEST(GradCheck, ElementwiseUnary) {
  expect_unary_grad([](auto& g, auto x) { return ops::scale(g, x, 1.7); }, {3, 4}, 30);
  expect_unary_grad([](auto& g, auto x) { return ops::add_scalar(g, x, -0.4); }, {3, 4}, 31);
  expect_unary_grad([](auto& g, auto x) { return ops::exp(g, x); }, {3, 4}, 32);
  expect_unary_grad([](auto& g, auto x) { return ops::log(g, x); }, {3, 4}, 33, 0.2, 2.0);
  expect_unary_grad([](auto& g, auto x) { return ops::relu(g, x); }, {3, 4}, 34);
  expect_unary_grad([](auto& g, auto x) { return ops::hard_swish(g, x); }, {3, 4}, 35, -4.0, 4.0);
  expect_unary_grad([](auto& g, auto x) { return ops::hard_sigmoid(g, x); }, {3, 4}, 36, -4.0, 4.0);
  expect_unary_grad([](auto& g, auto x) { return ops::clamp(g, x, -1.0, 1.0); }, {3, 4}, 37);
}

TEST(GradCheck, ShapeOps) {
  expect_unary_grad([](auto& g, auto x) { return ops::transpose(g, x); }, {3, 5}, 40);
  expect_unary_grad([](auto& g, auto x) { return ops::reshape(g, x, Shape{5, 3}); }, {3, 5}, 41);
  expect_unary_grad([](auto& g, auto x) { return ops::flatten(g, x); }, {2, 3, 2, 2}, 42);
  expect_unary_grad([](auto& g, auto x) { return ops::broadcast_to(g, x, Shape{2, 3, 4}); }, {3, 1}, 43);
}

TEST(GradCheck, Reductions) {
  for (std::size_t axis = 0; axis < 3; ++axis) {
    expect_unary_grad([axis](auto& g, auto x) { return ops::sum(g, x, axis); }, {2, 3, 4}, 50 + axis);
    expect_unary_grad([axis](auto& g, auto x) { return ops::mean(g, x, axis, true); }, {2, 3, 4}, 53 + axis);
    expect_unary_grad([axis](auto& g, auto x) { return ops::max(g, x, axis); }, {2, 3, 4}, 56 + axis);
    expect_unary_grad([axis](auto& g, auto x) { return ops::min(g, x, axis); }, {2, 3, 4}, 59 + axis);
  }
  expect_unary_grad([](auto& g, auto x) { return ops::mean(g, x); }, {2, 3, 4}, 62);
  expect_unary_grad([](auto& g, auto x) { return ops::max(g, x); }, {2, 3, 4}, 63);
}

TEST(GradCheck, Matmul) {
  expect_binary_grad([](auto& g, auto a, auto b) { return ops::matmul(g, a, b); }, {3, 5}, {5, 4}, 70);
}

TEST(GradCheck, RandomThreeLayerMlp) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Graph<double> g;
    auto x = g.constant(random_tensor<double>({6, 5}, 100 + seed));
    auto w1 = g.parameter(random_tensor<double>({5, 8}, 110 + seed, -0.7, 0.7), "w1");
    auto b1 = g.parameter(random_tensor<double>({8}, 120 + seed, -0.5, 0.5), "b1");
    auto w2 = g.parameter(random_tensor<double>({8, 7}, 130 + seed, -0.7, 0.7), "w2");
    auto b2 = g.parameter(random_tensor<double>({7}, 140 + seed, -0.5, 0.5), "b2");
    auto w3 = g.parameter(random_tensor<double>({7, 3}, 150 + seed, -0.7, 0.7), "w3");
    auto h1 = ops::relu(g, ops::add(g, ops::matmul(g, x, w1), b1));
    auto h2 = ops::hard_swish(g, ops::add(g, ops::matmul(g, h1, w2), b2));
    auto out = ops::matmul(g, h2, w3);
    auto root = ops::mean(g, ops::mul(g, out, out));
    const auto check = testutil::check_gradients(g, root, {w1, b1, w2, b2, w3});
    EXPECT_LE(check.worst_rel, 1e-4) << "seed " << seed;
  }
}

TEST(Graph, FloatAndDoubleAgree) {
  const auto xd = random_tensor<double>({4, 3}, 200);
  Graph<double> gd;
  Graph<float> gf;
  const double yd = gd.forward(ops::mean(gd, ops::exp(gd, gd.constant(xd)))).item();
  const float yf = gf.forward(ops::mean(gf, ops::exp(gf, gf.constant(xd.cast<float>())))).item();
  EXPECT_NEAR(yf, yd, 1e-5 * std::abs(yd));
}

TEST(GradCheck, StencilAcrossKinkIsShrunk) {
  Graph<double> g;
  Tensor<double> v({3});
  v[0] = 5e-5;   // within eps of the relu kink
  v[1] = -0.7;
  v[2] = 2.99995;  // within eps of the upper hard-swish kink
  auto x = g.parameter(v, "x");
  auto root = ops::add(g, ops::sum(g, ops::relu(g, x)), ops::sum(g, ops::hard_swish(g, x)));
  const auto check = testutil::check_gradients(g, root, {x});
  EXPECT_EQ(check.shrunk, 2u);
  EXPECT_EQ(check.unresolved, 0u);
  EXPECT_LE(check.worst_entry, 1e-8);
}
