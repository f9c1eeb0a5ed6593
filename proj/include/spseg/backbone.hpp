#pragma once

#include "spseg/graph.hpp"
#include "spseg/ops.hpp"
#include "spseg/rng.hpp"

#include <array>
#include <cstdint>

namespace spseg {

/// Residual feature extractor. A stride-2 stem is followed by three stages
/// whose first block halves the resolution, giving maps at 1/4, 1/8, 1/16.
struct BackboneConfig {
  Index stem_channels = 16;
  std::array<Index, 3> stage_channels{16, 32, 64};
  std::array<Index, 3> blocks_per_stage{2, 2, 2};
  Index norm_groups = 8;

  void validate() const;
};

template <typename Scalar>
struct FeaturePyramid {
  Var<Scalar> p3;  // 1/4
  Var<Scalar> p4;  // 1/8
  Var<Scalar> p5;  // 1/16, the deepest level
};

/// Adds backbone parameters ("backbone.*") drawn from `rng`.
template <typename Scalar>
void add_backbone_params(ParamSet<Scalar>& params, const BackboneConfig& cfg, Rng& rng);

/// Seeded, fan-in scaled initialization of a standalone backbone parameter set.
template <typename Scalar>
ParamSet<Scalar> init_backbone_params(const BackboneConfig& cfg, std::uint64_t seed);

/// image: [N,3,H,W] with H and W multiples of 16.
template <typename Scalar>
FeaturePyramid<Scalar> extract_features(Var<Scalar> image, const BackboneConfig& cfg, ParamSet<Scalar>& params);

}  // namespace spseg
