#include "spseg/encoder.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace spseg;
using spseg::test::random_tensor;
using spseg::test::reference_bilinear;

namespace {

void set_conv(ParamSet<double>& ps, const std::string& name, double weight, double bias = 0) {
  ps.at(name + ".weight").value.array().setConstant(weight);
  ps.at(name + ".bias").value.array().setConstant(bias);
}

ParamSet<double> encoder_params(const EncoderConfig& cfg, const BackboneConfig& bb, std::uint64_t seed) {
  ParamSet<double> ps;
  Rng rng(seed);
  add_encoder_params(ps, cfg, bb, rng);
  return ps;
}

ParamSet<double> single_channel_ppm(const std::vector<Index>& bins, double proj, double bin_weight) {
  ParamSet<double> ps;
  ps.add("ppm.proj.weight", Tensor<double>({1, 1, 1, 1}, proj));
  ps.add("ppm.proj.bias", Tensor<double>({1}));
  for (Index b : bins) {
    ps.add("ppm.bin" + std::to_string(b) + ".weight", Tensor<double>({1, 1, 1, 1}, bin_weight));
    ps.add("ppm.bin" + std::to_string(b) + ".bias", Tensor<double>({1}));
  }
  return ps;
}

struct Pyramid {
  Tensor<double> p3, p4, p5;
};

Pyramid random_pyramid(const BackboneConfig& bb, Index h, Index w, Rng& rng) {
  return {random_tensor({1, bb.stage_channels[0], h, w}, rng),
          random_tensor({1, bb.stage_channels[1], h / 2, w / 2}, rng),
          random_tensor({1, bb.stage_channels[2], h / 4, w / 4}, rng)};
}

Tensor<double> run_fuse(const Pyramid& p, const EncoderConfig& cfg, ParamSet<double>& ps) {
  Graph<double> g(false);
  FeaturePyramid<double> pyr{g.constant(p.p3), g.constant(p.p4), g.constant(p.p5)};
  return fuse(pyr, cfg, ps).value();
}

}  // namespace

TEST(PyramidPool, ConstantInputStaysConstant) {
  const std::vector<Index> bins{1, 2, 3, 6};
  auto ps = single_channel_ppm(bins, 1.0, 1.0);
  Graph<double> g(false);
  auto y = pyramid_pool(g.constant(Tensor<double>({1, 1, 7, 5}, 0.3)), bins, ps, "ppm");
  ASSERT_EQ(y.shape(), (Shape{1, 1, 7, 5}));
  for (Index i = 0; i < y.value().size(); ++i) EXPECT_NEAR(y.value()[i], 0.3 * 5, 1e-12);
}

TEST(PyramidPool, SingleBinBroadcastsGlobalMean) {
  auto ps = single_channel_ppm({1}, 0.0, 1.0);
  Rng rng(3);
  const auto x = random_tensor({1, 1, 6, 9}, rng);
  Graph<double> g(false);
  auto y = pyramid_pool(g.constant(x), {1}, ps, "ppm");
  const double mean = x.array().mean();
  for (Index i = 0; i < y.value().size(); ++i) EXPECT_NEAR(y.value()[i], mean, 1e-12);
}

TEST(PyramidPool, RampWithTwoBinsMatchesPrimitiveOracles) {
  auto ps = single_channel_ppm({2}, 1.0, 1.0);
  Tensor<double> x({1, 1, 4, 4});
  for (Index i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  // 2x2 block means of the ramp 0..15.
  const std::vector<std::vector<double>> means{{2.5, 4.5}, {10.5, 12.5}};
  Graph<double> g(false);
  auto y = pyramid_pool(g.constant(x), {2}, ps, "ppm");
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      EXPECT_NEAR(y.value()(0, 0, i, j), x(0, 0, i, j) + reference_bilinear(means, 4, 4, i, j), 1e-12);
}

TEST(PyramidPool, BinsClampToInputExtent) {
  auto ps = single_channel_ppm({6}, 0.0, 1.0);
  Rng rng(4);
  const auto x = random_tensor({1, 1, 3, 4}, rng);
  Graph<double> g(false);
  auto y = pyramid_pool(g.constant(x), {6}, ps, "ppm");
  // A 3x4 pooling grid on a 3x4 map is the identity.
  for (Index i = 0; i < x.size(); ++i) EXPECT_NEAR(y.value()[i], x[i], 1e-12);
}

TEST(Fuse, OutputExtentIsP3) {
  BackboneConfig bb;
  EncoderConfig cfg;
  auto ps = encoder_params(cfg, bb, 1);
  Rng rng(2);
  for (auto [h, w] : {std::pair<Index, Index>{4, 4}, {8, 12}, {16, 8}}) {
    const auto y = run_fuse(random_pyramid(bb, h, w, rng), cfg, ps);
    EXPECT_EQ(y.shape(), (Shape{1, cfg.fused_channels, h, w}));
  }
}

TEST(Fuse, BothPoolingPlacementsKeepExtent) {
  BackboneConfig bb;
  EncoderConfig cfg;
  cfg.pool_before_lateral = false;
  cfg.fused_channels = 32;
  auto ps = encoder_params(cfg, bb, 5);
  EXPECT_EQ(ps.at("encoder.ppm.proj.weight").value.dim(1), 32);
  Rng rng(6);
  EXPECT_EQ(run_fuse(random_pyramid(bb, 8, 8, rng), cfg, ps).shape(), (Shape{1, 32, 8, 8}));
}

TEST(Fuse, ZeroedDeepPathsIgnoreDeepInputs) {
  BackboneConfig bb;
  EncoderConfig cfg;
  auto ps = encoder_params(cfg, bb, 7);
  set_conv(ps, "encoder.lateral4", 0);
  set_conv(ps, "encoder.lateral5", 0);
  set_conv(ps, "encoder.ppm.proj", 0);
  for (Index b : cfg.ppm_bins) set_conv(ps, "encoder.ppm.bin" + std::to_string(b), 0);
  Rng rng(8);
  auto p = random_pyramid(bb, 8, 8, rng);
  const auto before = run_fuse(p, cfg, ps);
  p.p4 = random_tensor(p.p4.shape(), rng);
  p.p5 = random_tensor(p.p5.shape(), rng);
  const auto after = run_fuse(p, cfg, ps);
  EXPECT_TRUE((before.array() == after.array()).all());
  p.p3 = random_tensor(p.p3.shape(), rng);
  EXPECT_FALSE((before.array() == run_fuse(p, cfg, ps).array()).all());
}

// Every 1x1 weight set to u: each op maps a constant map to a constant map,
// so the fused value follows from scalar arithmetic along the op chain.
TEST(Fuse, ConstantPyramidPropagates) {
  BackboneConfig bb;
  EncoderConfig cfg;
  auto ps = encoder_params(cfg, bb, 9);
  const double u = 0.01;
  for (auto& p : ps) p.value.array().setConstant(p.name.ends_with(".bias") ? 0.0 : u);
  const double c3 = 0.5, c4 = -0.25, c5 = 0.75;
  const Pyramid p{Tensor<double>({1, 16, 8, 8}, c3), Tensor<double>({1, 32, 4, 4}, c4),
                  Tensor<double>({1, 64, 2, 2}, c5)};
  const double F = static_cast<double>(cfg.fused_channels);
  const double pooled = (1.0 + static_cast<double>(cfg.ppm_bins.size())) * u * 64 * c5;
  const double t5 = u * 64 * pooled;
  const double t4 = u * 32 * c4 + t5;
  const double t3 = u * 16 * c3 + t4;
  const double expected = std::max(0.0, u * F * (t3 + t4 + t5));
  const auto y = run_fuse(p, cfg, ps);
  for (Index i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], expected, 1e-12);
}

TEST(Fuse, ChannelMismatchNamesLevel) {
  BackboneConfig bb;
  EncoderConfig cfg;
  auto ps = encoder_params(cfg, bb, 1);
  Rng rng(2);
  auto p = random_pyramid(bb, 8, 8, rng);
  p.p4 = random_tensor({1, 24, 4, 4}, rng);
  try {
    run_fuse(p, cfg, ps);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("p4"), std::string::npos) << e.what();
  }
}

TEST(Fuse, RejectsNonHalvingExtents) {
  BackboneConfig bb;
  EncoderConfig cfg;
  auto ps = encoder_params(cfg, bb, 1);
  Rng rng(2);
  auto p = random_pyramid(bb, 8, 8, rng);
  p.p5 = random_tensor({1, 64, 3, 2}, rng);
  EXPECT_THROW(run_fuse(p, cfg, ps), ShapeError);
}

TEST(EncoderConfig, Validation) {
  EncoderConfig cfg;
  cfg.ppm_bins = {};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.ppm_bins = {1, 3, 2};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.fused_channels = 60;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(EncoderConfig{}.validate());
}
