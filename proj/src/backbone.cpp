#include "spseg/backbone.hpp"

#include "spseg/layers.hpp"

namespace spseg {
namespace {

enum class Shortcut { kIdentity, kPool, kProjection };

Shortcut shortcut_kind(Index in, Index out, Index stride) {
  if (in != out) return Shortcut::kProjection;
  return stride == 1 ? Shortcut::kIdentity : Shortcut::kPool;
}

std::string block_name(int stage, Index block) {
  return "backbone.s" + std::to_string(stage + 1) + ".b" + std::to_string(block);
}

}  // namespace

void BackboneConfig::validate() const {
  if (stem_channels < 1) throw ConfigError("backbone: stem_channels must be positive");
  for (int s = 0; s < 3; ++s) {
    if (blocks_per_stage[s] < 1) throw ConfigError("backbone: every stage needs at least one block");
    if (s > 0 && stage_channels[s] <= stage_channels[s - 1])
      throw ConfigError("backbone: stage_channels must be strictly increasing");
    if (stage_channels[s] % norm_groups != 0)
      throw ConfigError("backbone: stage width " + std::to_string(stage_channels[s]) + " not divisible by " +
                        std::to_string(norm_groups) + " groups");
  }
  if (stage_channels[0] < 1) throw ConfigError("backbone: stage_channels must be positive");
  if (stem_channels % norm_groups != 0) throw ConfigError("backbone: stem width not divisible by norm groups");
}

template <typename Scalar>
void add_backbone_params(ParamSet<Scalar>& ps, const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  layers::add_conv(ps, "backbone.stem.conv", 3, cfg.stem_channels, 3, rng);
  layers::add_norm(ps, "backbone.stem.norm", cfg.stem_channels);
  Index in = cfg.stem_channels;
  for (int s = 0; s < 3; ++s) {
    const Index out = cfg.stage_channels[s];
    for (Index b = 0; b < cfg.blocks_per_stage[s]; ++b) {
      const std::string name = block_name(s, b);
      const Index stride = b == 0 ? 2 : 1;
      layers::add_conv(ps, name + ".conv1", in, out, 3, rng);
      layers::add_norm(ps, name + ".norm1", out);
      layers::add_conv(ps, name + ".conv2", out, out, 3, rng);
      layers::add_norm(ps, name + ".norm2", out);
      if (shortcut_kind(in, out, stride) == Shortcut::kProjection) {
        layers::add_conv(ps, name + ".proj", in, out, 1, rng);
        layers::add_norm(ps, name + ".proj_norm", out);
      }
      in = out;
    }
  }
}

template <typename Scalar>
ParamSet<Scalar> init_backbone_params(const BackboneConfig& cfg, std::uint64_t seed) {
  ParamSet<Scalar> ps;
  Rng rng(seed);
  add_backbone_params(ps, cfg, rng);
  return ps;
}

template <typename Scalar>
FeaturePyramid<Scalar> extract_features(Var<Scalar> image, const BackboneConfig& cfg, ParamSet<Scalar>& ps) {
  cfg.validate();
  const auto& s = image.shape();
  if (s.size() != 4 || s[1] != 3) throw ShapeError("extract_features: expects [N,3,H,W], got " + to_string(s));
  if (s[2] % 16 != 0 || s[3] % 16 != 0)
    throw ShapeError("extract_features: spatial extents must be multiples of 16 (pad first), got " + to_string(s));

  const Index groups = cfg.norm_groups;
  auto x = relu(layers::norm(layers::conv(image, ps, "backbone.stem.conv", 2), ps, "backbone.stem.norm", groups));
  Index in = cfg.stem_channels;
  std::array<Var<Scalar>, 3> stages;
  for (int st = 0; st < 3; ++st) {
    const Index out = cfg.stage_channels[st];
    for (Index b = 0; b < cfg.blocks_per_stage[st]; ++b) {
      const std::string name = block_name(st, b);
      const Index stride = b == 0 ? 2 : 1;
      auto h = relu(layers::norm(layers::conv(x, ps, name + ".conv1", stride), ps, name + ".norm1", groups));
      h = layers::norm(layers::conv(h, ps, name + ".conv2"), ps, name + ".norm2", groups);
      Var<Scalar> skip;
      switch (shortcut_kind(in, out, stride)) {
        case Shortcut::kIdentity: skip = x; break;
        case Shortcut::kPool: skip = pool2d(PoolKind::kAvg, x, {x.dim(2) / 2, x.dim(3) / 2}); break;
        case Shortcut::kProjection:
          skip = layers::norm(layers::conv(x, ps, name + ".proj", stride), ps, name + ".proj_norm", groups);
          break;
      }
      x = relu(add(h, skip));
      in = out;
    }
    stages[st] = x;
  }
  return {stages[0], stages[1], stages[2]};
}

template void add_backbone_params<float>(ParamSet<float>&, const BackboneConfig&, Rng&);
template void add_backbone_params<double>(ParamSet<double>&, const BackboneConfig&, Rng&);
template ParamSet<float> init_backbone_params<float>(const BackboneConfig&, std::uint64_t);
template ParamSet<double> init_backbone_params<double>(const BackboneConfig&, std::uint64_t);
template FeaturePyramid<float> extract_features<float>(Var<float>, const BackboneConfig&, ParamSet<float>&);
template FeaturePyramid<double> extract_features<double>(Var<double>, const BackboneConfig&, ParamSet<double>&);

}  // namespace spseg
