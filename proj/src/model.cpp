#include "spseg/model.hpp"

#include <cmath>

namespace spseg {

void ModelConfig::validate() const {
  backbone.validate();
  encoder.validate();
  decoder.validate();
}

template <typename Scalar>
ParamSet<Scalar> init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamSet<Scalar> ps;
  Rng rng(seed);
  add_backbone_params(ps, cfg.backbone, rng);
  add_encoder_params(ps, cfg.encoder, cfg.backbone, rng);
  add_decoder_params(ps, cfg.decoder, cfg.encoder.fused_channels, rng);
  return ps;
}

template <typename Scalar>
ModelOutputs<Scalar> forward(Var<Scalar> image, const ModelConfig& cfg, ParamSet<Scalar>& ps) {
  if (image.shape().size() != 4 || image.dim(0) != 1)
    throw ShapeError("forward: expects one image [1,3,H,W], got " + to_string(image.shape()));
  const auto pyramid = extract_features(image, cfg.backbone, ps);
  const auto features = with_coordinates(fuse(pyramid, cfg.encoder, ps));
  auto iams = compute_iams(features, ps);
  const auto heads = predict_heads(aggregate_features(iams, features), ps);
  auto masks = compose_masks(heads.kernels, mask_features(features, ps));
  return {iams, heads.class_logits, heads.objectness_logits, heads.kernels, masks};
}

template <typename Scalar>
std::vector<std::pair<double, Index>> slot_scores(const Tensor<Scalar>& cls, const Tensor<Scalar>& obj) {
  auto prob = [](Scalar logit) { return 1.0 / (1.0 + std::exp(-static_cast<double>(logit))); };
  const Index n = cls.dim(0), k = cls.dim(1);
  std::vector<std::pair<double, Index>> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index c = 1; c < k; ++c)
      if (cls(i, c) > cls(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = {prob(cls(i, best)) * prob(obj(i, 0)), best};
  }
  return out;
}

template <typename Scalar>
std::vector<ScoredMask> infer(const Tensor<Scalar>& image, const ModelConfig& cfg, ParamSet<Scalar>& ps,
                              double score_threshold) {
  const auto padded = pad_to_grid(image, 16);
  const Index H = padded.image.dim(1), W = padded.image.dim(2);
  Graph<Scalar> g(false);
  const auto out = forward(g.constant(padded.image.reshaped({1, 3, H, W})), cfg, ps);
  const auto scores = slot_scores(out.class_logits.value(), out.objectness_logits.value());
  const Tensor<Scalar>& logits = out.mask_logits.value();
  const Index h = logits.dim(1), w = logits.dim(2);
  std::vector<ScoredMask> kept;
  for (Index i = 0; i < logits.dim(0); ++i) {
    const auto [score, cls] = scores[static_cast<std::size_t>(i)];
    if (!(score >= score_threshold)) continue;
    Tensor<Scalar> one({1, h, w});
    one.array() = logits.array().segment(i * h * w, h * w);
    const auto full = kernels::upsample_bilinear(one, {H, W});
    ScoredMask m{i, score, cls, BinaryMask(padded.original.height, padded.original.width)};
    m.mask = (full.matrix(H, W).topLeftCorner(padded.original.height, padded.original.width).array() > Scalar(0))
                 .template cast<std::uint8_t>();
    kept.push_back(std::move(m));
  }
  return kept;
}

#define SPSEG_INSTANTIATE(S)                                                                               \
  template ParamSet<S> init_model_params<S>(const ModelConfig&, std::uint64_t);                            \
  template ModelOutputs<S> forward<S>(Var<S>, const ModelConfig&, ParamSet<S>&);                           \
  template std::vector<std::pair<double, Index>> slot_scores<S>(const Tensor<S>&, const Tensor<S>&);       \
  template std::vector<ScoredMask> infer<S>(const Tensor<S>&, const ModelConfig&, ParamSet<S>&, double);
SPSEG_INSTANTIATE(float)
SPSEG_INSTANTIATE(double)
#undef SPSEG_INSTANTIATE

}  // namespace spseg
