#include "spseg/checkpoint.hpp"
#include "spseg/gradcheck.hpp"
#include "spseg/ops.hpp"
#include "spseg/optim.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

using namespace spseg;
using spseg::test::random_tensor;
using spseg::test::reference_bilinear;
using T = Tensor<double>;

namespace {

constexpr double kOpTol = 1e-4;

// Weighted sum against a fixed random tensor, so that gradient errors cannot
// cancel across coordinates.
Var<double> probe(Var<double> y, std::uint64_t seed = 99) {
  Rng rng(seed);
  auto w = y.graph->constant(random_tensor(y.shape(), rng));
  return sum(mul(y, w));
}

}  // namespace

// --- conv2d -----------------------------------------------------------------

TEST(Conv2d, ScalarKernelScales) {
  Graph<double> g;
  auto x = g.constant(T({1, 1, 3, 3}, 1.0));
  auto w = g.constant(T({1, 1, 1, 1}, {2.0}));
  auto b = g.constant(T({1}, {0.0}));
  auto y = conv2d(x, w, b, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (Index i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(y.value()[i], 2.0);
}

TEST(Conv2d, IdentityKernelWithPaddingReproducesInput) {
  Rng rng(1);
  Graph<double> g;
  auto xv = random_tensor({2, 3, 6, 5}, rng);
  T w({3, 3, 3, 3});
  for (Index c = 0; c < 3; ++c) w(c, c, 1, 1) = 1.0;
  auto y = conv2d(g.constant(xv), g.constant(w), g.constant(T({3})), 1, 1);
  ASSERT_EQ(y.shape(), xv.shape());
  EXPECT_TRUE((y.value().array() == xv.array()).all());
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  ParamSet<double> ps;
  ps.add("x", random_tensor({1, 2, 5, 5}, rng));
  ps.add("w", random_tensor({3, 2, 3, 3}, rng));
  ps.add("b", random_tensor({3}, rng));
  for (Index stride : {1, 2}) {
    for (Index pad : {0, 1}) {
      auto plain = check_gradients(ps, [&](Graph<double>& g) {
        return sum(conv2d(g.parameter(ps, "x"), g.parameter(ps, "w"), g.parameter(ps, "b"), stride, pad));
      });
      EXPECT_LE(plain.max_rel_error, kOpTol) << plain.worst << " stride " << stride << " pad " << pad;
      auto weighted = check_gradients(ps, [&](Graph<double>& g) {
        return probe(conv2d(g.parameter(ps, "x"), g.parameter(ps, "w"), g.parameter(ps, "b"), stride, pad));
      });
      EXPECT_LE(weighted.max_rel_error, kOpTol) << weighted.worst;
    }
  }
}

TEST(Conv2d, OutputShapeFollowsFormulaForRandomConfigs) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Index k = 2 * rng.uniform_int(0, 2) + 1;
    const Index stride = rng.uniform_int(1, 3), pad = rng.uniform_int(0, 2);
    const Index h = rng.uniform_int(std::max<Index>(1, k - 2 * pad), 12);
    const Index w = rng.uniform_int(std::max<Index>(1, k - 2 * pad), 12);
    Graph<double> g(false);
    auto y = conv2d(g.constant(T({1, 2, h, w})), g.constant(T({3, 2, k, k})), g.constant(T({3})), stride, pad);
    EXPECT_EQ(y.shape(), (Shape{1, 3, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1}));
  }
}

TEST(Conv2d, RejectsShapeMismatch) {
  Graph<double> g;
  auto x = g.constant(T({1, 2, 4, 4}));
  EXPECT_THROW(conv2d(x, g.constant(T({1, 3, 3, 3})), g.constant(T({1})), 1, 1), ShapeError);
  EXPECT_THROW(conv2d(x, g.constant(T({1, 2, 2, 2})), g.constant(T({1})), 1, 1), ShapeError);
  EXPECT_THROW(conv2d(x, g.constant(T({1, 2, 3, 3})), g.constant(T({2})), 1, 1), ShapeError);
  EXPECT_THROW(conv2d(x, g.constant(T({1, 2, 7, 7})), g.constant(T({1})), 1, 0), ShapeError);
}

// --- activations --------------------------------------------------------------

TEST(Activation, ElementaryValues) {
  Graph<double> g;
  auto r = activation(Activation::kRelu, g.constant(T({3}, {-1.0, 0.0, 2.0})));
  EXPECT_EQ(r.value()[0], 0.0);
  EXPECT_EQ(r.value()[1], 0.0);
  EXPECT_EQ(r.value()[2], 2.0);
  EXPECT_DOUBLE_EQ(activation(Activation::kSigmoid, g.constant(T({1}, {0.0}))).value()[0], 0.5);
  auto s = activation(Activation::kSoftmax, g.constant(T({3}, 0.7)), 0);
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(s.value()[i], 1.0 / 3.0, 1e-15);
  EXPECT_THROW(activation(Activation::kSoftmax, g.constant(T({3}))), ConfigError);
}

TEST(Activation, SoftmaxSumsToOneAndSigmoidStaysInOpenInterval) {
  Rng rng(4);
  Graph<double> g;
  auto x = g.constant(random_tensor({3, 4, 5}, rng, -20, 20));
  for (Index axis = 0; axis < 3; ++axis) {
    auto s = softmax(x, axis);
    const auto& v = s.value();
    for (Index a = 0; a < 3; ++a)
      for (Index b = 0; b < 4; ++b)
        for (Index c = 0; c < 5; ++c) {
          if ((axis == 0 && a) || (axis == 1 && b) || (axis == 2 && c)) continue;
          double total = 0;
          for (Index k = 0; k < x.dim(axis); ++k)
            total += axis == 0 ? v(k, b, c) : axis == 1 ? v(a, k, c) : v(a, b, k);
          EXPECT_NEAR(total, 1.0, 1e-6);
        }
  }
  auto sg = sigmoid(g.constant(random_tensor({50}, rng, -30, 30)));
  EXPECT_TRUE((sg.value().array() > 0).all() && (sg.value().array() < 1).all());
}

TEST(Activation, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  ParamSet<double> ps;
  ps.add("x", random_tensor({2, 3, 4}, rng, -2, 2));
  for (auto kind : {Activation::kRelu, Activation::kSigmoid, Activation::kSoftmax}) {
    for (Index axis : {0, 1, 2}) {
      auto r = check_gradients(ps, [&](Graph<double>& g) { return probe(activation(kind, g.parameter(ps, "x"), axis)); });
      EXPECT_LE(r.max_rel_error, kOpTol) << r.worst;
    }
  }
}

// --- pooling --------------------------------------------------------------

TEST(Pool2d, AdaptiveAverageOfConstantIsConstant) {
  Graph<double> g;
  auto x = g.constant(T({1, 2, 7, 5}, 3.25));
  for (Index oh = 1; oh <= 7; ++oh)
    for (Index ow = 1; ow <= 5; ++ow) {
      auto y = pool2d(PoolKind::kAdaptiveAvg, x, {oh, ow});
      EXPECT_TRUE((y.value().array() == 3.25).all());
    }
}

TEST(Pool2d, AdaptiveAverageOfRampMatchesBinAverages) {
  T ramp({1, 1, 4, 4});
  for (Index i = 0; i < 16; ++i) ramp[i] = static_cast<double>(i);
  // Oracle: each 2x2 quadrant averaged directly.
  std::vector<double> expected;
  for (int bi = 0; bi < 2; ++bi)
    for (int bj = 0; bj < 2; ++bj) {
      double acc = 0;
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) acc += (bi * 2 + r) * 4 + (bj * 2 + c);
      expected.push_back(acc / 4);
    }
  EXPECT_EQ(expected, (std::vector<double>{2.5, 4.5, 10.5, 12.5}));
  Graph<double> g;
  auto y = pool2d(PoolKind::kAdaptiveAvg, g.constant(ramp), {2, 2});
  for (Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.value()[i], expected[static_cast<std::size_t>(i)]);
  auto a = pool2d(PoolKind::kAvg, g.constant(ramp), {2, 2});
  EXPECT_TRUE((a.value().array() == y.value().array()).all());
}

TEST(Pool2d, AdaptiveBinsCoverUnevenExtents) {
  T x({1, 1, 5, 1});
  for (Index i = 0; i < 5; ++i) x[i] = static_cast<double>(i);
  Graph<double> g;
  // bins over 5 rows into 3: [0,2), [1,4), [3,5)
  auto y = pool2d(PoolKind::kAdaptiveAvg, g.constant(x), {3, 1});
  EXPECT_DOUBLE_EQ(y.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.value()[1], 2.0);
  EXPECT_DOUBLE_EQ(y.value()[2], 3.5);
}

TEST(Pool2d, MaxOfOneHotMarksOnlyItsBin) {
  T x({1, 1, 4, 6});
  x(0, 0, 3, 1) = 1.0;
  Graph<double> g;
  auto y = pool2d(PoolKind::kMax, g.constant(x), {2, 3});
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 3; ++j) EXPECT_EQ(y.value()(0, 0, i, j), (i == 1 && j == 0) ? 1.0 : 0.0);
}

TEST(Pool2d, RejectsZeroAndOversizedOutput) {
  Graph<double> g;
  auto x = g.constant(T({1, 1, 4, 4}));
  EXPECT_THROW(pool2d(PoolKind::kAdaptiveAvg, x, {0, 2}), ShapeError);
  EXPECT_THROW(pool2d(PoolKind::kAdaptiveAvg, x, {5, 2}), ShapeError);
  EXPECT_THROW(pool2d(PoolKind::kMax, x, {3, 3}), ShapeError);
}

TEST(Pool2d, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  ParamSet<double> ps;
  ps.add("x", random_tensor({1, 2, 6, 6}, rng));
  for (auto kind : {PoolKind::kMax, PoolKind::kAvg, PoolKind::kAdaptiveAvg}) {
    const Extent2 out = kind == PoolKind::kAdaptiveAvg ? Extent2{4, 5} : Extent2{3, 2};
    auto r = check_gradients(ps, [&](Graph<double>& g) { return probe(pool2d(kind, g.parameter(ps, "x"), out)); });
    EXPECT_LE(r.max_rel_error, kOpTol) << r.worst;
  }
}

// --- bilinear upsampling ------------------------------------------------------

TEST(Upsample, IdentityAndConstant) {
  Rng rng(7);
  Graph<double> g;
  auto xv = random_tensor({1, 2, 3, 4}, rng);
  EXPECT_TRUE((upsample_bilinear(g.constant(xv), {3, 4}).value().array() == xv.array()).all());
  auto c = upsample_bilinear(g.constant(T({1, 1, 3, 2}, 7.0)), {11, 5});
  for (Index i = 0; i < c.value().size(); ++i) EXPECT_NEAR(c.value()[i], 7.0, 1e-12);
}

TEST(Upsample, TwoByTwoToFourByFourMatchesReferenceSampler) {
  const std::vector<std::vector<double>> img{{0, 1}, {2, 3}};
  Graph<double> g;
  auto y = upsample_bilinear(g.constant(T({1, 1, 2, 2}, {0.0, 1.0, 2.0, 3.0})), {4, 4});
  // Frozen from the reference sampler: rows weights {0, .25, .75, 1}.
  const double frozen[4][4] = {{0, 0.25, 0.75, 1}, {0.5, 0.75, 1.25, 1.5}, {1.5, 1.75, 2.25, 2.5}, {2, 2.25, 2.75, 3}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      EXPECT_DOUBLE_EQ(reference_bilinear(img, 4, 4, i, j), frozen[i][j]);
      EXPECT_DOUBLE_EQ(y.value()(0, 0, i, j), frozen[i][j]);
    }
}

TEST(Upsample, ArbitrarySizesMatchReferenceSampler) {
  Rng rng(8);
  std::vector<std::vector<double>> img(3, std::vector<double>(5));
  T x({1, 1, 3, 5});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) x(0, 0, i, j) = img[i][j] = rng.uniform();
  Graph<double> g;
  for (auto [oh, ow] : {std::pair{7, 9}, {2, 3}, {12, 20}, {1, 1}}) {
    auto y = upsample_bilinear(g.constant(x), {oh, ow});
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) EXPECT_NEAR(y.value()(0, 0, i, j), reference_bilinear(img, oh, ow, i, j), 1e-12);
  }
}

TEST(Upsample, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  ParamSet<double> ps;
  ps.add("x", random_tensor({2, 3, 4}, rng));
  for (Extent2 out : {Extent2{8, 8}, Extent2{5, 7}, Extent2{2, 2}}) {
    auto r = check_gradients(ps, [&](Graph<double>& g) { return probe(upsample_bilinear(g.parameter(ps, "x"), out)); });
    EXPECT_LE(r.max_rel_error, kOpTol) << r.worst;
  }
}

// --- matmul -------------------------------------------------------------------

TEST(MatMul, HandValues) {
  Rng rng(10);
  Graph<double> g;
  T eye({3, 3});
  for (Index i = 0; i < 3; ++i) eye(i, i) = 1.0;
  auto xv = random_tensor({3, 4}, rng);
  EXPECT_TRUE((matmul(g.constant(eye), g.constant(xv)).value().array() == xv.array()).all());
  auto y = matmul(g.constant(T({1, 2}, {1.0, 2.0})), g.constant(T({2, 1}, {3.0, 4.0})));
  EXPECT_EQ(y.shape(), (Shape{1, 1}));
  EXPECT_EQ(y.value()[0], 11.0);
  EXPECT_THROW(matmul(g.constant(T({2, 3})), g.constant(T({2, 3}))), ShapeError);
}

TEST(MatMul, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  ParamSet<double> ps;
  ps.add("a", random_tensor({4, 5}, rng));
  ps.add("b", random_tensor({5, 2}, rng));
  ps.add("ba", random_tensor({3, 4, 5}, rng));
  ps.add("bb", random_tensor({3, 5, 2}, rng));
  auto r = check_gradients(ps, [&](Graph<double>& g) {
    return add(probe(matmul(g.parameter(ps, "a"), g.parameter(ps, "b"))),
               probe(matmul(g.parameter(ps, "ba"), g.parameter(ps, "bb"))));
  });
  EXPECT_LE(r.max_rel_error, kOpTol) << r.worst;
}

// --- group normalization ----------------------------------------------------

TEST(GroupNorm, ConstantInputNormalizesToZero) {
  Graph<double> g;
  auto y = group_norm(g.constant(T({1, 4, 3, 3}, 5.0)), 2, g.constant(T({4}, 1.0)), g.constant(T({4})));
  EXPECT_TRUE((y.value().array() == 0.0).all());
}

TEST(GroupNorm, ZeroGainYieldsShift) {
  Rng rng(12);
  Graph<double> g;
  auto y = group_norm(g.constant(random_tensor({2, 4, 3, 3}, rng)), 4, g.constant(T({4})), g.constant(T({4}, 0.3)));
  EXPECT_TRUE((y.value().array() == 0.3).all());
}

TEST(GroupNorm, GroupStatisticsAreStandardized) {
  Rng rng(13);
  Graph<double> g;
  auto xv = random_tensor({2, 8, 5, 5}, rng, -3, 7);
  auto y = group_norm(g.constant(xv), 4, g.constant(T({8}, 1.0)), g.constant(T({8})));
  const Index M = 2 * 25;
  for (Index seg = 0; seg < 2 * 4; ++seg) {
    auto s = y.value().array().segment(seg * M, M);
    const double mu = s.mean();
    const double var = (s - mu).square().mean();
    EXPECT_LT(std::abs(mu), 1e-6);
    EXPECT_LT(std::abs(var - 1.0), 1e-3);
  }
  EXPECT_THROW(group_norm(g.constant(xv), 3, g.constant(T({8}, 1.0)), g.constant(T({8}))), ConfigError);
}

TEST(GroupNorm, GradientMatchesFiniteDifferences) {
  Rng rng(14);
  ParamSet<double> ps;
  ps.add("x", random_tensor({2, 4, 3, 3}, rng));
  ps.add("gain", random_tensor({4}, rng, 0.5, 1.5));
  ps.add("shift", random_tensor({4}, rng));
  auto r = check_gradients(ps, [&](Graph<double>& g) {
    return probe(group_norm(g.parameter(ps, "x"), 2, g.parameter(ps, "gain"), g.parameter(ps, "shift")));
  });
  EXPECT_LE(r.max_rel_error, kOpTol) << r.worst;
}

// --- remaining structural ops ---------------------------------------------------

TEST(StructuralOps, GradientsMatchFiniteDifferences) {
  Rng rng(15);
  ParamSet<double> ps;
  ps.add("a", random_tensor({3, 4}, rng, 0.5, 2.0));
  ps.add("b", random_tensor({3, 4}, rng, 0.5, 2.0));
  ps.add("w", random_tensor({2, 4}, rng));
  ps.add("bias", random_tensor({2}, rng));
  ps.add("pos", random_tensor({3, 5}, rng, 0.1, 1.0));
  const auto target = random_tensor({3, 4}, rng, 0, 1);
  auto r = check_gradients(ps, [&](Graph<double>& g) {
    auto a = g.parameter(ps, "a"), b = g.parameter(ps, "b");
    auto terms = probe(div(a, b), 1) + probe(log(mul(a, b)), 2) + probe(sub(a, scale(b, 0.5)), 3) +
                 probe(linear(a, g.parameter(ps, "w"), g.parameter(ps, "bias")), 4) +
                 probe(transpose(add_scalar(a, 1.5)), 5) + probe(sum_rows(b), 6) +
                 probe(concat(std::vector{a, b}, 0), 7) + probe(concat(std::vector{a, b}, 1), 8) +
                 probe(index_rows(a, {2, 0, 2}), 9) + probe(normalize_rows(g.parameter(ps, "pos"), 1e-8), 10) +
                 probe(bce_with_logits(a, target), 11) +
                 probe(reshape(b, {2, 6}), 12) + mean(a);
    return terms;
  });
  EXPECT_LE(r.max_rel_error, kOpTol) << r.worst;
}

TEST(StructuralOps, BceWithLogitsIsStableForLargeLogits) {
  Graph<double> g;
  auto l = bce_with_logits(g.constant(T({2}, {800.0, -800.0})), T({2}, {0.0, 1.0}));
  EXPECT_DOUBLE_EQ(l.value()[0], 800.0);
  EXPECT_DOUBLE_EQ(l.value()[1], 800.0);
}

TEST(StructuralOps, NormalizeRowsSumsToOne) {
  Rng rng(16);
  Graph<double> g;
  auto y = normalize_rows(g.constant(random_tensor({4, 9}, rng, 0.0, 1.0)), 1e-8);
  for (Index r = 0; r < 4; ++r) EXPECT_NEAR(y.value().matrix(4, 9).row(r).sum(), 1.0, 1e-7);
}

// --- backward -------------------------------------------------------------------

TEST(Backward, SimpleGradients) {
  ParamSet<double> ps;
  auto& x = ps.add("x", T({2}, {1.0, 2.0}));
  auto& unused = ps.add("unused", T({3}, 1.0));
  {
    Graph<double> g;
    auto xv = g.parameter(x);
    g.parameter(unused);
    g.backward(sum(xv));
  }
  EXPECT_TRUE((x.grad->array() == 1.0).all());
  ASSERT_TRUE(unused.grad.has_value());
  EXPECT_TRUE((unused.grad->array() == 0.0).all());

  ps.clear_grad();
  Graph<double> g;
  auto xv = g.parameter(x);
  g.backward(sum(mul(xv, xv)));
  EXPECT_EQ((*x.grad)[0], 2.0);
  EXPECT_EQ((*x.grad)[1], 4.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  ParamSet<double> ps;
  auto& x = ps.add("x", T({2}, 1.0));
  Graph<double> g;
  EXPECT_THROW(g.backward(g.parameter(x)), ShapeError);
}

TEST(Backward, TapeOrderIsTopological) {
  Rng rng(17);
  ParamSet<double> ps;
  ps.add("x", random_tensor({1, 2, 4, 4}, rng));
  ps.add("w", random_tensor({2, 2, 3, 3}, rng));
  ps.add("b", random_tensor({2}, rng));
  Graph<double> g;
  auto y = relu(conv2d(g.parameter(ps, "x"), g.parameter(ps, "w"), g.parameter(ps, "b"), 1, 1));
  sum(upsample_bilinear(y, {8, 8}));
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t in : g.node(i).inputs) EXPECT_LT(in, i);
}

TEST(Backward, ForwardIsBitDeterministic) {
  Rng rng(18);
  auto xv = random_tensor<float>({1, 3, 16, 16}, rng);
  auto wv = random_tensor<float>({8, 3, 3, 3}, rng);
  auto run = [&] {
    Graph<float> g(false);
    auto y = conv2d(g.constant(xv), g.constant(wv), g.constant(Tensor<float>({8})), 2, 1);
    y = group_norm(y, 4, g.constant(Tensor<float>({8}, 1.f)), g.constant(Tensor<float>({8})));
    return upsample_bilinear(relu(y), {13, 17}).value();
  };
  const auto a = run(), b = run();
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())), 0);
}

// --- optimizer ------------------------------------------------------------------

TEST(Sgd, StepRules) {
  ParamSet<double> ps;
  auto& p = ps.add("p", T({1}, {1.0}));
  p.grad = T({1}, {0.5});
  sgd_step(ps, 0.0, 0.9);
  EXPECT_EQ(p.value[0], 1.0);

  ParamSet<double> qs;
  auto& q = qs.add("q", T({1}, {1.0}));
  q.grad = T({1}, {0.5});
  sgd_step(qs, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(q.value[0], 0.95);
  EXPECT_EQ((*q.grad)[0], 0.0);

  ParamSet<double> rs;
  auto& r = rs.add("r", T({1}, {0.0}));
  const double grad = 0.25;
  for (int step = 0; step < 2; ++step) {
    r.grad = T({1}, {grad});
    sgd_step(rs, 1.0, 0.9);
  }
  // v1 = g, v2 = 0.9 g + g
  EXPECT_DOUBLE_EQ(r.velocity[0], grad * (1 + 0.9));
  EXPECT_DOUBLE_EQ(r.value[0], -(grad + grad * 1.9));
}

TEST(Sgd, MissingGradientNamesParameter) {
  ParamSet<double> ps;
  ps.add("encoder.lateral3.weight", T({2}));
  try {
    sgd_step(ps, 0.1, 0.0);
    FAIL() << "expected an error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.lateral3.weight"), std::string::npos);
  }
}

// --- checkpoint -------------------------------------------------------------------

TEST(Checkpoint, BitExactRoundTrip) {
  Rng rng(19);
  ParamSet<float> ps;
  ps.add("a.weight", random_tensor<float>({3, 2, 3, 3}, rng));
  ps.add("a.bias", random_tensor<float>({3}, rng));
  ps.add("odd values", Tensor<float>({4}, {0.0f, -0.0f, 1e-38f, 3.4e38f}));
  const auto path = std::filesystem::temp_directory_path() / "spseg_ckpt_roundtrip.bin";
  save_checkpoint(path, ps);

  ParamSet<float> loaded;
  for (const auto& p : ps) loaded.add(p.name, Tensor<float>(p.value.shape()));
  load_checkpoint(path, loaded);
  for (const auto& p : ps) {
    const auto& q = loaded.at(p.name);
    ASSERT_EQ(q.value.shape(), p.value.shape());
    EXPECT_EQ(std::memcmp(q.value.data(), p.value.data(), sizeof(float) * static_cast<std::size_t>(p.value.size())), 0);
  }
  // Re-saving the loaded set reproduces the file byte for byte.
  const auto again = std::filesystem::temp_directory_path() / "spseg_ckpt_roundtrip2.bin";
  save_checkpoint(again, loaded);
  std::ifstream f1(path, std::ios::binary), f2(again, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(s1.substr(0, 6), "SPSEG1");
}

TEST(Checkpoint, RejectsForeignFilesAndShapeMismatch) {
  const auto path = std::filesystem::temp_directory_path() / "spseg_ckpt_bad.bin";
  { std::ofstream(path) << "NOTSPSEG"; }
  EXPECT_THROW(read_tensor_file(path), CheckpointError);

  ParamSet<float> ps;
  ps.add("w", Tensor<float>({2, 2}));
  save_checkpoint(path, ps);
  ParamSet<float> other;
  other.add("w", Tensor<float>({4}));
  EXPECT_THROW(load_checkpoint(path, other), CheckpointError);
  ParamSet<float> missing;
  missing.add("v", Tensor<float>({2, 2}));
  EXPECT_THROW(load_checkpoint(path, missing), CheckpointError);
}
