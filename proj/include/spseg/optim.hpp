#pragma once

#include "spseg/graph.hpp"

namespace spseg {

/// Heavy-ball SGD: v <- momentum * v + grad, p <- p - lr * v. Gradients are
/// zeroed afterwards. Every trainable parameter must carry a gradient.
template <typename Scalar>
void sgd_step(ParamSet<Scalar>& params, Scalar lr, Scalar momentum);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename Scalar>
Scalar clip_grad_norm(ParamSet<Scalar>& params, Scalar max_norm);

}  // namespace spseg
