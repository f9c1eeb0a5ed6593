#include "spseg/decoder.hpp"

#include "spseg/layers.hpp"

namespace spseg {

void DecoderConfig::validate() const {
  if (n_instances < 1) throw ConfigError("decoder: n_instances must be positive");
  if (kernel_dim < 1) throw ConfigError("decoder: kernel_dim must be positive");
  if (num_classes < 1) throw ConfigError("decoder: num_classes must be positive");
  if (mask_branch_channels < 1) throw ConfigError("decoder: mask_branch_channels must be positive");
}

template <typename Scalar>
void add_decoder_params(ParamSet<Scalar>& ps, const DecoderConfig& cfg, Index fused_channels, Rng& rng) {
  cfg.validate();
  const Index c = fused_channels + 2;
  const auto prior = static_cast<Scalar>(kPriorBias);
  layers::add_conv(ps, "decoder.iam", c, cfg.n_instances, 3, rng);
  layers::add_linear(ps, "decoder.cls", c, cfg.num_classes, rng, prior);
  layers::add_linear(ps, "decoder.obj", c, 1, rng, prior);
  layers::add_linear(ps, "decoder.kernel", c, cfg.kernel_dim, rng);
  layers::add_conv(ps, "decoder.mask1", c, cfg.mask_branch_channels, 3, rng);
  layers::add_conv(ps, "decoder.mask2", cfg.mask_branch_channels, cfg.kernel_dim, 3, rng);
}

template <typename Scalar>
Var<Scalar> with_coordinates(Var<Scalar> fused) {
  const auto& s = fused.shape();
  if (s.size() != 4 || s[0] != 1) throw ShapeError("with_coordinates: expects [1,F,h,w], got " + to_string(s));
  const Index h = s[2], w = s[3];
  Tensor<Scalar> coords({1, 2, h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      coords(0, 0, y, x) = static_cast<Scalar>(2.0 * (x + 0.5) / static_cast<double>(w) - 1.0);
      coords(0, 1, y, x) = static_cast<Scalar>(2.0 * (y + 0.5) / static_cast<double>(h) - 1.0);
    }
  return concat(std::vector<Var<Scalar>>{fused, fused.graph->constant(std::move(coords))}, 1);
}

template <typename Scalar>
Var<Scalar> compute_iams(Var<Scalar> features, ParamSet<Scalar>& ps) {
  const auto& s = features.shape();
  if (s.size() != 4 || s[0] != 1) throw ShapeError("compute_iams: expects [1,C,h,w], got " + to_string(s));
  auto logits = layers::conv(features, ps, "decoder.iam");
  const Index n = logits.dim(1), h = s[2], w = s[3];
  auto maps = normalize_rows(sigmoid(reshape(logits, {n, h * w})), Scalar(1e-8));
  return reshape(maps, {n, h, w});
}

template <typename Scalar>
Var<Scalar> aggregate_features(Var<Scalar> iams, Var<Scalar> features) {
  const auto& fs = features.shape();
  const auto& is = iams.shape();
  if (fs.size() != 4 || fs[0] != 1 || is.size() != 3 || is[1] != fs[2] || is[2] != fs[3])
    throw ShapeError("aggregate_features: extent mismatch between IAMs " + to_string(is) + " and features " +
                     to_string(fs));
  const Index hw = fs[2] * fs[3];
  return matmul(reshape(iams, {is[0], hw}), transpose(reshape(features, {fs[1], hw})));
}

template <typename Scalar>
HeadOutputs<Scalar> predict_heads(Var<Scalar> inst, ParamSet<Scalar>& ps) {
  return {layers::dense(inst, ps, "decoder.cls"), layers::dense(inst, ps, "decoder.obj"),
          layers::dense(inst, ps, "decoder.kernel")};
}

template <typename Scalar>
Var<Scalar> mask_features(Var<Scalar> features, ParamSet<Scalar>& ps) {
  auto m = layers::conv(relu(layers::conv(features, ps, "decoder.mask1")), ps, "decoder.mask2");
  return reshape(m, {m.dim(1), m.dim(2), m.dim(3)});
}

template <typename Scalar>
Var<Scalar> compose_masks(Var<Scalar> kernels, Var<Scalar> feats) {
  const auto& ks = kernels.shape();
  const auto& fs = feats.shape();
  if (ks.size() != 2 || fs.size() != 3 || ks[1] != fs[0])
    throw ShapeError("compose_masks: kernel_dim mismatch, kernels " + to_string(ks) + " vs mask features " +
                     to_string(fs));
  auto flat = matmul(kernels, reshape(feats, {fs[0], fs[1] * fs[2]}));
  return reshape(flat, {ks[0], fs[1], fs[2]});
}

#define SPSEG_INSTANTIATE(S)                                                                     \
  template void add_decoder_params<S>(ParamSet<S>&, const DecoderConfig&, Index, Rng&);          \
  template Var<S> with_coordinates<S>(Var<S>);                                                   \
  template Var<S> compute_iams<S>(Var<S>, ParamSet<S>&);                                         \
  template Var<S> aggregate_features<S>(Var<S>, Var<S>);                                         \
  template HeadOutputs<S> predict_heads<S>(Var<S>, ParamSet<S>&);                                \
  template Var<S> mask_features<S>(Var<S>, ParamSet<S>&);                                        \
  template Var<S> compose_masks<S>(Var<S>, Var<S>);
SPSEG_INSTANTIATE(float)
SPSEG_INSTANTIATE(double)
#undef SPSEG_INSTANTIATE

}  // namespace spseg
