#pragma once

#include "spseg/backbone.hpp"
#include "spseg/decoder.hpp"
#include "spseg/encoder.hpp"
#include "spseg/mask.hpp"
#include "spseg/raster.hpp"

#include <cstdint>
#include <vector>

namespace spseg {

struct ModelConfig {
  BackboneConfig backbone;
  EncoderConfig encoder;
  DecoderConfig decoder;

  void validate() const;
};

template <typename Scalar>
ParamSet<Scalar> init_model_params(const ModelConfig& cfg, std::uint64_t seed);

template <typename Scalar>
struct ModelOutputs {
  Var<Scalar> iams;              // [n,h,w] at 1/4 resolution
  Var<Scalar> class_logits;      // [n,num_classes]
  Var<Scalar> objectness_logits; // [n,1]
  Var<Scalar> kernels;           // [n,kernel_dim]
  Var<Scalar> mask_logits;       // [n,h,w]
};

/// image: [1,3,H,W] with H, W multiples of 16.
template <typename Scalar>
ModelOutputs<Scalar> forward(Var<Scalar> image, const ModelConfig& cfg, ParamSet<Scalar>& params);

struct ScoredMask {
  Index slot = 0;
  double score = 0;
  Index class_id = 0;
  BinaryMask mask;
};

/// score = max class probability * objectness, in double.
template <typename Scalar>
std::vector<std::pair<double, Index>> slot_scores(const Tensor<Scalar>& class_logits,
                                                   const Tensor<Scalar>& objectness_logits);

/// Full forward pass on an unpadded [3,H,W] image. Keeps every slot whose
/// score is >= score_threshold (in slot order, no suppression) and returns its
/// mask resized to the padded input, cropped to H x W and binarized at
/// probability 0.5.
template <typename Scalar>
std::vector<ScoredMask> infer(const Tensor<Scalar>& image, const ModelConfig& cfg, ParamSet<Scalar>& params,
                              double score_threshold);

}  // namespace spseg
