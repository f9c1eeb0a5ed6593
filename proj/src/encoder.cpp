#include "spseg/encoder.hpp"

#include "spseg/layers.hpp"

#include <algorithm>

namespace spseg {
namespace {

Extent2 spatial(const Shape& s) { return {s[2], s[3]}; }

}  // namespace

void EncoderConfig::validate() const {
  if (fused_channels < 1) throw ConfigError("encoder: fused_channels must be positive");
  if (fused_channels % norm_groups != 0)
    throw ConfigError("encoder: fused_channels " + std::to_string(fused_channels) + " not divisible by " +
                      std::to_string(norm_groups) + " groups");
  if (ppm_bins.empty()) throw ConfigError("encoder: ppm_bins must not be empty");
  for (std::size_t i = 0; i < ppm_bins.size(); ++i) {
    if (ppm_bins[i] < 1) throw ConfigError("encoder: ppm bins must be positive");
    if (i > 0 && ppm_bins[i] <= ppm_bins[i - 1]) throw ConfigError("encoder: ppm_bins must be strictly increasing");
  }
}

template <typename Scalar>
void add_encoder_params(ParamSet<Scalar>& ps, const EncoderConfig& cfg, const BackboneConfig& bb, Rng& rng) {
  cfg.validate();
  const Index F = cfg.fused_channels;
  const Index pooled = cfg.pool_before_lateral ? bb.stage_channels[2] : F;
  layers::add_conv(ps, "encoder.ppm.proj", pooled, pooled, 1, rng);
  for (Index b : cfg.ppm_bins) layers::add_conv(ps, "encoder.ppm.bin" + std::to_string(b), pooled, pooled, 1, rng);
  for (int level = 0; level < 3; ++level)
    layers::add_conv(ps, "encoder.lateral" + std::to_string(level + 3), bb.stage_channels[level], F, 1, rng);
  layers::add_conv(ps, "encoder.out", 3 * F, F, 1, rng);
}

template <typename Scalar>
Var<Scalar> pyramid_pool(Var<Scalar> x, const std::vector<Index>& bins, ParamSet<Scalar>& ps,
                         const std::string& prefix) {
  if (x.shape().size() != 4) throw ShapeError("pyramid_pool: expects [N,C,h,w], got " + to_string(x.shape()));
  const Extent2 extent = spatial(x.shape());
  auto out = layers::conv(x, ps, prefix + ".proj");
  for (Index b : bins) {
    const Extent2 cells{std::min(b, extent.height), std::min(b, extent.width)};
    auto pooled = pool2d(PoolKind::kAdaptiveAvg, x, cells);
    auto context = layers::conv(pooled, ps, prefix + ".bin" + std::to_string(b));
    out = add(out, upsample_bilinear(context, extent));
  }
  return out;
}

template <typename Scalar>
Var<Scalar> fuse(const FeaturePyramid<Scalar>& pyr, const EncoderConfig& cfg, ParamSet<Scalar>& ps) {
  cfg.validate();
  const Extent2 e3 = spatial(pyr.p3.shape()), e4 = spatial(pyr.p4.shape()), e5 = spatial(pyr.p5.shape());
  if (e4.height * 2 != e3.height || e4.width * 2 != e3.width || e5.height * 2 != e4.height ||
      e5.width * 2 != e4.width)
    throw ShapeError("fuse: pyramid extents must halve between levels, got " + to_string(pyr.p3.shape()) + ", " +
                     to_string(pyr.p4.shape()) + ", " + to_string(pyr.p5.shape()));

  auto lateral = [&](Var<Scalar> x, int level) {
    const std::string name = "encoder.lateral" + std::to_string(level);
    const Index expected = ps.at(name + ".weight").value.dim(1);
    if (x.dim(1) != expected)
      throw ShapeError("fuse: level p" + std::to_string(level) + " has " + std::to_string(x.dim(1)) +
                       " channels, lateral projection expects " + std::to_string(expected));
    return layers::conv(x, ps, name);
  };

  Var<Scalar> t5 = cfg.pool_before_lateral ? lateral(pyramid_pool(pyr.p5, cfg.ppm_bins, ps), 5)
                                           : pyramid_pool(lateral(pyr.p5, 5), cfg.ppm_bins, ps);
  auto t4 = add(lateral(pyr.p4, 4), upsample_bilinear(t5, e4));
  auto t3 = add(lateral(pyr.p3, 3), upsample_bilinear(t4, e3));
  auto stacked = concat(std::vector<Var<Scalar>>{t3, upsample_bilinear(t4, e3), upsample_bilinear(t5, e3)}, 1);
  return relu(layers::conv(stacked, ps, "encoder.out"));
}

template void add_encoder_params<float>(ParamSet<float>&, const EncoderConfig&, const BackboneConfig&, Rng&);
template void add_encoder_params<double>(ParamSet<double>&, const EncoderConfig&, const BackboneConfig&, Rng&);
template Var<float> pyramid_pool<float>(Var<float>, const std::vector<Index>&, ParamSet<float>&, const std::string&);
template Var<double> pyramid_pool<double>(Var<double>, const std::vector<Index>&, ParamSet<double>&,
                                          const std::string&);
template Var<float> fuse<float>(const FeaturePyramid<float>&, const EncoderConfig&, ParamSet<float>&);
template Var<double> fuse<double>(const FeaturePyramid<double>&, const EncoderConfig&, ParamSet<double>&);

}  // namespace spseg
