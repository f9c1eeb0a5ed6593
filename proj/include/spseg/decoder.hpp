#pragma once

#include "spseg/graph.hpp"
#include "spseg/ops.hpp"
#include "spseg/rng.hpp"

namespace spseg {

struct DecoderConfig {
  Index n_instances = 100;
  Index kernel_dim = 32;
  Index num_classes = 1;
  Index mask_branch_channels = 64;

  void validate() const;
};

/// Initial bias of the class and objectness heads: logit of 0.01.
inline constexpr double kPriorBias = -4.59511985013459;

template <typename Scalar>
void add_decoder_params(ParamSet<Scalar>& params, const DecoderConfig& cfg, Index fused_channels, Rng& rng);

/// Appends two channels holding normalized x and y in [-1,1] (pixel centres).
/// fused: [1,F,h,w] -> [1,F+2,h,w].
template <typename Scalar>
Var<Scalar> with_coordinates(Var<Scalar> fused);

/// 3x3 conv to n_instances channels, sigmoid, per-map normalization.
/// features: [1,C,h,w] -> [n_instances,h,w], each map summing to 1.
template <typename Scalar>
Var<Scalar> compute_iams(Var<Scalar> features, ParamSet<Scalar>& params);

/// IAM-weighted sum over pixels. iams: [n,h,w], features: [1,C,h,w] -> [n,C].
template <typename Scalar>
Var<Scalar> aggregate_features(Var<Scalar> iams, Var<Scalar> features);

template <typename Scalar>
struct HeadOutputs {
  Var<Scalar> class_logits;      // [n, num_classes]
  Var<Scalar> objectness_logits; // [n, 1]; the objectness score is its sigmoid
  Var<Scalar> kernels;           // [n, kernel_dim]
};

template <typename Scalar>
HeadOutputs<Scalar> predict_heads(Var<Scalar> instance_features, ParamSet<Scalar>& params);

/// Two 3x3 convs with a ReLU between. [1,C,h,w] -> [kernel_dim,h,w].
template <typename Scalar>
Var<Scalar> mask_features(Var<Scalar> features, ParamSet<Scalar>& params);

/// mask_logits[i] = sum_d kernels[i,d] * mask_features[d]. -> [n,h,w].
template <typename Scalar>
Var<Scalar> compose_masks(Var<Scalar> kernels, Var<Scalar> mask_features);

}  // namespace spseg
