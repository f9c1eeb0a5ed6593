#pragma once

#include "spseg/backbone.hpp"

#include <vector>

namespace spseg {

/// Instance context encoder: FPN-style top-down merge of the three pyramid
/// levels, pyramid pooling on the deepest level, then all levels upsampled to
/// 1/4 resolution, concatenated and projected to one map.
struct EncoderConfig {
  Index fused_channels = 64;
  std::vector<Index> ppm_bins{1, 2, 3, 6};
  /// true: pool the raw deepest map before its lateral projection.
  /// false: pool the projected deepest map inside the top-down pathway.
  bool pool_before_lateral = true;
  Index norm_groups = 8;

  void validate() const;
};

template <typename Scalar>
void add_encoder_params(ParamSet<Scalar>& params, const EncoderConfig& cfg, const BackboneConfig& backbone, Rng& rng);

/// Pyramid pooling over x:[N,C,h,w]. For each bin b the map is adaptively
/// averaged to b x b (clamped to the input extent), passed through a 1x1
/// conv and resized back; the results are summed with a 1x1 projection of x.
/// Parameters: "<prefix>.proj" and "<prefix>.bin<b>".
template <typename Scalar>
Var<Scalar> pyramid_pool(Var<Scalar> x, const std::vector<Index>& bins, ParamSet<Scalar>& params,
                         const std::string& prefix = "encoder.ppm");

/// Returns [N, fused_channels, H/4, W/4].
template <typename Scalar>
Var<Scalar> fuse(const FeaturePyramid<Scalar>& pyramid, const EncoderConfig& cfg, ParamSet<Scalar>& params);

}  // namespace spseg
