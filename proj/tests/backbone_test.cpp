#include "spseg/backbone.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstring>

using namespace spseg;
using spseg::test::random_tensor;

namespace {

FeaturePyramid<double> run(Graph<double>& g, const Tensor<double>& image, const BackboneConfig& cfg,
                           ParamSet<double>& ps) {
  return extract_features(g.constant(image), cfg, ps);
}

bool bytes_equal(const Tensor<double>& a, const Tensor<double>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

}  // namespace

TEST(Backbone, StrideArithmeticAt224) {
  BackboneConfig cfg;
  auto ps = init_backbone_params<double>(cfg, 1);
  Rng rng(2);
  Graph<double> g(false);
  auto pyr = run(g, random_tensor({1, 3, 224, 224}, rng, 0, 1), cfg, ps);
  EXPECT_EQ(pyr.p3.shape(), (Shape{1, 16, 56, 56}));
  EXPECT_EQ(pyr.p4.shape(), (Shape{1, 32, 28, 28}));
  EXPECT_EQ(pyr.p5.shape(), (Shape{1, 64, 14, 14}));
}

// Biases and norm shifts start at zero, so a black image maps to zero at
// every level.
TEST(Backbone, ZeroImageGivesZeroMaps) {
  BackboneConfig cfg;
  auto ps = init_backbone_params<double>(cfg, 3);
  Graph<double> g(false);
  auto pyr = run(g, Tensor<double>({1, 3, 64, 64}), cfg, ps);
  for (auto v : {pyr.p3, pyr.p4, pyr.p5}) {
    EXPECT_TRUE(v.value().all_finite());
    EXPECT_EQ(v.value().array().abs().maxCoeff(), 0.0);
  }
}

TEST(Backbone, DeterministicForward) {
  BackboneConfig cfg;
  Rng rng(4);
  const auto image = random_tensor({1, 3, 48, 64}, rng, 0, 1);
  auto a = init_backbone_params<double>(cfg, 9);
  auto b = init_backbone_params<double>(cfg, 9);
  Graph<double> ga(false), gb(false);
  auto pa = run(ga, image, cfg, a);
  auto pb = run(gb, image, cfg, b);
  EXPECT_TRUE(bytes_equal(pa.p3.value(), pb.p3.value()));
  EXPECT_TRUE(bytes_equal(pa.p4.value(), pb.p4.value()));
  EXPECT_TRUE(bytes_equal(pa.p5.value(), pb.p5.value()));
}

TEST(Backbone, InitIsSeeded) {
  BackboneConfig cfg;
  auto a = init_backbone_params<double>(cfg, 5);
  auto b = init_backbone_params<double>(cfg, 5);
  auto c = init_backbone_params<double>(cfg, 6);
  ASSERT_EQ(a.size(), b.size());
  bool any_differs = false;
  for (const auto& p : a) {
    EXPECT_TRUE(bytes_equal(p.value, b.at(p.name).value)) << p.name;
    any_differs = any_differs || !bytes_equal(p.value, c.at(p.name).value);
  }
  EXPECT_TRUE(any_differs);
}

TEST(Backbone, FanInVarianceOn64ChannelConv) {
  BackboneConfig cfg;
  auto ps = init_backbone_params<double>(cfg, 11);
  const auto& w = ps.at("backbone.s3.b1.conv1.weight").value;
  ASSERT_EQ(w.shape(), (Shape{64, 64, 3, 3}));
  const double mean = w.array().mean();
  const double var = (w.array() - mean).square().sum() / static_cast<double>(w.size() - 1);
  const double target = 2.0 / (64 * 9);
  EXPECT_NEAR(var, target, 0.3 * target);
}

TEST(Backbone, LevelExtentsForPaddedInputs) {
  BackboneConfig cfg;
  cfg.blocks_per_stage = {1, 1, 1};
  auto ps = init_backbone_params<double>(cfg, 12);
  Rng rng(13);
  for (int trial = 0; trial < 8; ++trial) {
    const Index h = 16 * rng.uniform_int(1, 5), w = 16 * rng.uniform_int(1, 5);
    Graph<double> g(false);
    auto pyr = run(g, random_tensor({1, 3, h, w}, rng), cfg, ps);
    EXPECT_EQ(pyr.p3.shape(), (Shape{1, 16, (h + 3) / 4, (w + 3) / 4}));
    EXPECT_EQ(pyr.p4.shape(), (Shape{1, 32, (h + 7) / 8, (w + 7) / 8}));
    EXPECT_EQ(pyr.p5.shape(), (Shape{1, 64, (h + 15) / 16, (w + 15) / 16}));
  }
}

// With the second conv of every trailing block zeroed, those blocks reduce to
// their identity shortcut, so the deeper network matches a one-block-per-stage
// network sharing the leading blocks' weights.
TEST(Backbone, ZeroedBlockLeavesIdentityPath) {
  BackboneConfig deep;
  auto ps = init_backbone_params<double>(deep, 21);
  for (int s = 1; s <= 3; ++s) {
    const std::string name = "backbone.s" + std::to_string(s) + ".b1.conv2";
    ps.at(name + ".weight").value.array().setZero();
    ps.at(name + ".bias").value.array().setZero();
  }
  BackboneConfig shallow = deep;
  shallow.blocks_per_stage = {1, 1, 1};
  Rng rng(22);
  const auto image = random_tensor({1, 3, 32, 48}, rng, 0, 1);
  Graph<double> ga(false), gb(false);
  auto a = run(ga, image, deep, ps);
  auto b = run(gb, image, shallow, ps);
  for (auto [x, y] : {std::pair{a.p3, b.p3}, {a.p4, b.p4}, {a.p5, b.p5}}) {
    EXPECT_TRUE(x.value().all_finite());
    EXPECT_TRUE(bytes_equal(x.value(), y.value()));
  }
}

TEST(Backbone, RejectsUnpaddedInput) {
  BackboneConfig cfg;
  auto ps = init_backbone_params<double>(cfg, 1);
  Graph<double> g(false);
  EXPECT_THROW(run(g, Tensor<double>({1, 3, 40, 48}), cfg, ps), ShapeError);
  EXPECT_THROW(run(g, Tensor<double>({1, 1, 32, 32}), cfg, ps), ShapeError);
}

TEST(Backbone, ConfigValidation) {
  BackboneConfig cfg;
  cfg.stage_channels = {32, 32, 64};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.blocks_per_stage = {1, 0, 1};
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(BackboneConfig{}.validate());
}
