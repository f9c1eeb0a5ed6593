#pragma once

// Parameter-creation and application helpers shared by the network modules.

#include "spseg/ops.hpp"
#include "spseg/rng.hpp"

#include <cmath>
#include <string>

namespace spseg::layers {

/// He-style fan-in uniform bound: U(-b, b) with b = sqrt(6 / fan_in), i.e.
/// variance 2 / fan_in.
inline double fan_in_bound(Index fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

template <typename Scalar>
Tensor<Scalar> fan_in_uniform(const Shape& shape, Index fan_in, Rng& rng) {
  const double b = fan_in_bound(fan_in);
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.uniform(-b, b));
  return t;
}

template <typename Scalar>
void add_conv(ParamSet<Scalar>& ps, const std::string& name, Index in, Index out, Index k, Rng& rng,
              Scalar bias_init = Scalar(0)) {
  ps.add(name + ".weight", fan_in_uniform<Scalar>({out, in, k, k}, in * k * k, rng));
  ps.add(name + ".bias", Tensor<Scalar>({out}, bias_init));
}

template <typename Scalar>
void add_linear(ParamSet<Scalar>& ps, const std::string& name, Index in, Index out, Rng& rng,
                Scalar bias_init = Scalar(0)) {
  ps.add(name + ".weight", fan_in_uniform<Scalar>({out, in}, in, rng));
  ps.add(name + ".bias", Tensor<Scalar>({out}, bias_init));
}

template <typename Scalar>
void add_norm(ParamSet<Scalar>& ps, const std::string& name, Index channels) {
  ps.add(name + ".gain", Tensor<Scalar>({channels}, Scalar(1)));
  ps.add(name + ".shift", Tensor<Scalar>({channels}, Scalar(0)));
}

template <typename Scalar>
Var<Scalar> conv(Var<Scalar> x, ParamSet<Scalar>& ps, const std::string& name, Index stride = 1) {
  Graph<Scalar>& g = *x.graph;
  auto w = g.parameter(ps, name + ".weight");
  const Index k = w.dim(2);
  return conv2d(x, w, g.parameter(ps, name + ".bias"), stride, k / 2);
}

template <typename Scalar>
Var<Scalar> dense(Var<Scalar> x, ParamSet<Scalar>& ps, const std::string& name) {
  Graph<Scalar>& g = *x.graph;
  return linear(x, g.parameter(ps, name + ".weight"), g.parameter(ps, name + ".bias"));
}

template <typename Scalar>
Var<Scalar> norm(Var<Scalar> x, ParamSet<Scalar>& ps, const std::string& name, Index groups) {
  Graph<Scalar>& g = *x.graph;
  return group_norm(x, groups, g.parameter(ps, name + ".gain"), g.parameter(ps, name + ".shift"));
}

}  // namespace spseg::layers
