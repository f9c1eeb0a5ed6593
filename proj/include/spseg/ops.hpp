#pragma once

// Differentiable operators over Graph variables. Each operator evaluates
// eagerly, records its backward rule on the tape and returns the new node.

#include "spseg/graph.hpp"

#include <optional>
#include <vector>

namespace spseg {

struct Extent2 {
  Index height = 0;
  Index width = 0;
  friend bool operator==(const Extent2&, const Extent2&) = default;
};

enum class Activation { kRelu, kSigmoid, kSoftmax };
enum class PoolKind { kMax, kAvg, kAdaptiveAvg };

// --- convolution and spatial operators ------------------------------------

/// 2-D cross-correlation with zero padding. x:[N,C,H,W], weight:[K,C,kh,kw],
/// bias:[K]. Kernel extents must be odd.
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias, Index stride = 1, Index pad = 0);

/// Output extent of a convolution along one axis.
inline Index conv_out_extent(Index in, Index kernel, Index stride, Index pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

/// Pools the trailing two axes into `out` bins. Bin i along an axis of
/// length L spans [floor(i*L/out), ceil((i+1)*L/out)). kMax and kAvg require
/// the extent to divide evenly; kAdaptiveAvg does not.
template <typename Scalar>
Var<Scalar> pool2d(PoolKind kind, Var<Scalar> x, Extent2 out);

/// Bilinear resize of the trailing two axes, align-corners=false.
template <typename Scalar>
Var<Scalar> upsample_bilinear(Var<Scalar> x, Extent2 out);

/// Per-sample group normalization of x:[N,C,H,W] followed by a per-channel affine map.
template <typename Scalar>
Var<Scalar> group_norm(Var<Scalar> x, Index groups, Var<Scalar> gain, Var<Scalar> shift, Scalar eps = Scalar(1e-5));

// --- nonlinearities ----------------------------------------------------------

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x);
template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x);
template <typename Scalar>
Var<Scalar> softmax(Var<Scalar> x, Index axis);

/// Dispatching form; `axis` is required for (and only meaningful to) softmax.
template <typename Scalar>
Var<Scalar> activation(Activation kind, Var<Scalar> x, std::optional<Index> axis = std::nullopt);

// --- linear algebra ----------------------------------------------------------

/// a:[..,M,K] times b:[..,K,P]. Leading extents must match, or b may be 2-D
/// and shared across the batch.
template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b);

/// x:[R,K] -> x * weight^T + bias with weight:[O,K], bias:[O].
template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias);

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> x);

// --- elementwise and structural ----------------------------------------------

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar>
Var<Scalar> div(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar factor);
template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> x, Scalar offset);
template <typename Scalar>
Var<Scalar> log(Var<Scalar> x);

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return mul(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Scalar s, Var<Scalar> x) { return scale(x, s); }

/// Sum of all elements as a rank-0 tensor.
template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x);
template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x);
/// Sums the last axis away.
template <typename Scalar>
Var<Scalar> sum_rows(Var<Scalar> x);

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape);
template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, Index axis);
/// Gathers entries along axis 0.
template <typename Scalar>
Var<Scalar> index_rows(Var<Scalar> x, const std::vector<Index>& rows);

/// x:[R,K] -> each row divided by (row sum + eps).
template <typename Scalar>
Var<Scalar> normalize_rows(Var<Scalar> x, Scalar eps);

/// Elementwise binary cross-entropy of sigmoid(logits) against a constant
/// target, evaluated in the overflow-safe softplus form.
template <typename Scalar>
Var<Scalar> bce_with_logits(Var<Scalar> logits, const Tensor<Scalar>& target);

// --- graph-free kernels shared with inference and matching ------------------

namespace kernels {

template <typename Scalar>
Tensor<Scalar> upsample_bilinear(const Tensor<Scalar>& x, Extent2 out);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);

}  // namespace kernels

}  // namespace spseg
