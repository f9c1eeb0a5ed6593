#include "spseg/optim.hpp"

#include <cmath>

namespace spseg {

template <typename Scalar>
void sgd_step(ParamSet<Scalar>& params, Scalar lr, Scalar momentum) {
  for (auto& p : params)
    if (p.requires_grad && !p.grad) throw ConfigError("sgd_step: parameter '" + p.name + "' has no gradient");
  for (auto& p : params) {
    if (!p.requires_grad) continue;
    if (p.velocity.shape() != p.value.shape()) p.velocity = Tensor<Scalar>::zeros_like(p.value);
    p.velocity.array() = momentum * p.velocity.array() + p.grad->array();
    p.value.array() -= lr * p.velocity.array();
    p.grad->array().setZero();
  }
}

template <typename Scalar>
Scalar clip_grad_norm(ParamSet<Scalar>& params, Scalar max_norm) {
  Scalar sq = 0;
  for (const auto& p : params)
    if (p.grad) sq += p.grad->array().square().sum();
  const Scalar norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const Scalar f = max_norm / norm;
    for (auto& p : params)
      if (p.grad) p.grad->array() *= f;
  }
  return norm;
}

template void sgd_step<float>(ParamSet<float>&, float, float);
template void sgd_step<double>(ParamSet<double>&, double, double);
template float clip_grad_norm<float>(ParamSet<float>&, float);
template double clip_grad_norm<double>(ParamSet<double>&, double);

}  // namespace spseg
