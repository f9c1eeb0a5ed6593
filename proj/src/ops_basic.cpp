#include "spseg/ops.hpp"

#include <cmath>
#include <numeric>

namespace spseg {
namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
void require_same_shape(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": operand shapes differ, " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  Index outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, Index axis) {
  AxisSplit r;
  for (Index i = 0; i < static_cast<Index>(s.size()); ++i) {
    if (i < axis) r.outer *= s[i];
    else if (i == axis) r.extent = s[i];
    else r.inner *= s[i];
  }
  return r;
}

Index normalize_axis(const char* op, Index axis, Index rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError(std::string(op) + ": axis out of range");
  return axis;
}

}  // namespace

namespace kernels {

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape());
  y.array() = Scalar(1) / (Scalar(1) + (-x.array()).exp());
  return y;
}

}  // namespace kernels

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  Tensor<Scalar> y(x.shape());
  y.array() = x.value().array().max(Scalar(0));
  return x.graph->record(OpKind::kRelu, {x}, std::move(y),
                         [x](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                           gin[0]->array() += (x.value().array() > Scalar(0)).select(g.array(), Scalar(0));
                         });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) {
  Tensor<Scalar> y = kernels::sigmoid(x.value());
  Graph<Scalar>* graph = x.graph;
  const std::size_t self = graph->size();
  return graph->record(OpKind::kSigmoid, {x}, std::move(y),
                       [graph, self](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                         const auto& s = graph->node(self).value.array();
                         gin[0]->array() += g.array() * s * (Scalar(1) - s);
                       });
}

template <typename Scalar>
Var<Scalar> softmax(Var<Scalar> x, Index axis) {
  axis = normalize_axis("softmax", axis, x.value().rank());
  const AxisSplit sp = split_at(x.shape(), axis);
  Tensor<Scalar> y(x.shape());
  const Scalar* src = x.value().data();
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index i = 0; i < sp.inner; ++i) {
      const Index base = o * sp.extent * sp.inner + i;
      Scalar mx = src[base];
      for (Index k = 1; k < sp.extent; ++k) mx = std::max(mx, src[base + k * sp.inner]);
      Scalar total = 0;
      for (Index k = 0; k < sp.extent; ++k) {
        const Scalar e = std::exp(src[base + k * sp.inner] - mx);
        y[base + k * sp.inner] = e;
        total += e;
      }
      for (Index k = 0; k < sp.extent; ++k) y[base + k * sp.inner] /= total;
    }
  }
  Graph<Scalar>* graph = x.graph;
  const std::size_t self = graph->size();
  return graph->record(OpKind::kSoftmax, {x}, std::move(y),
                       [graph, self, sp](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                         const auto& s = graph->node(self).value;
                         for (Index o = 0; o < sp.outer; ++o) {
                           for (Index i = 0; i < sp.inner; ++i) {
                             const Index base = o * sp.extent * sp.inner + i;
                             Scalar dot = 0;
                             for (Index k = 0; k < sp.extent; ++k) dot += g[base + k * sp.inner] * s[base + k * sp.inner];
                             for (Index k = 0; k < sp.extent; ++k) {
                               const Index at = base + k * sp.inner;
                               (*gin[0])[at] += s[at] * (g[at] - dot);
                             }
                           }
                         }
                       });
}

template <typename Scalar>
Var<Scalar> activation(Activation kind, Var<Scalar> x, std::optional<Index> axis) {
  switch (kind) {
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kSoftmax:
      if (!axis) throw ConfigError("activation: softmax requires an axis");
      return softmax(x, *axis);
  }
  throw ConfigError("activation: unknown kind");
}

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) throw ShapeError("matmul: operands must be at least 2-D");
  const Index M = as[as.size() - 2], K = as.back(), K2 = bs[bs.size() - 2], P = bs.back();
  if (K != K2)
    throw ShapeError("matmul: inner extents differ, " + to_string(as) + " x " + to_string(bs));
  const bool shared_b = bs.size() == 2;
  if (!shared_b && !std::equal(as.begin(), as.end() - 2, bs.begin(), bs.end() - 2))
    throw ShapeError("matmul: batch extents differ, " + to_string(as) + " x " + to_string(bs));
  Shape os(as.begin(), as.end() - 2);
  os.push_back(M);
  os.push_back(P);
  Index batch = 1;
  for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];

  Tensor<Scalar> y(os);
  for (Index n = 0; n < batch; ++n) {
    const Index boff = shared_b ? 0 : n * K * P;
    y.matrix(M, P, n * M * P).noalias() = a.value().matrix(M, K, n * M * K) * b.value().matrix(K, P, boff);
  }
  return a.graph->record(
      OpKind::kMatMul, {a, b}, std::move(y),
      [a, b, batch, M, K, P, shared_b](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
        for (Index n = 0; n < batch; ++n) {
          const Index boff = shared_b ? 0 : n * K * P;
          const auto G = g.matrix(M, P, n * M * P);
          if (gin[0]) gin[0]->matrix(M, K, n * M * K).noalias() += G * b.value().matrix(K, P, boff).transpose();
          if (gin[1]) gin[1]->matrix(K, P, boff).noalias() += a.value().matrix(M, K, n * M * K).transpose() * G;
        }
      });
}

template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || ws[1] != xs[1])
    throw ShapeError("linear: input " + to_string(xs) + " incompatible with weight " + to_string(ws));
  if (bias.shape() != Shape{ws[0]}) throw ShapeError("linear: bias must be [" + std::to_string(ws[0]) + "]");
  const Index R = xs[0], K = xs[1], O = ws[0];
  Tensor<Scalar> y({R, O});
  auto Y = y.matrix(R, O);
  Y.noalias() = x.value().matrix(R, K) * weight.value().matrix(O, K).transpose();
  Y.rowwise() += bias.value().array().matrix().transpose();
  return x.graph->record(OpKind::kLinear, {x, weight, bias}, std::move(y),
                         [x, weight, R, K, O](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                           const auto G = g.matrix(R, O);
                           if (gin[0]) gin[0]->matrix(R, K).noalias() += G * weight.value().matrix(O, K);
                           if (gin[1]) gin[1]->matrix(O, K).noalias() += G.transpose() * x.value().matrix(R, K);
                           if (gin[2]) gin[2]->array().matrix() += G.colwise().sum().transpose();
                         });
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> x) {
  const auto& xs = x.shape();
  if (xs.size() != 2) throw ShapeError("transpose: expects a 2-D operand, got " + to_string(xs));
  const Index R = xs[0], C = xs[1];
  Tensor<Scalar> y({C, R});
  y.matrix(C, R) = x.value().matrix(R, C).transpose();
  return x.graph->record(OpKind::kTranspose, {x}, std::move(y),
                         [R, C](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                           gin[0]->matrix(R, C) += g.matrix(C, R).transpose();
                         });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape("add", a, b);
  Tensor<Scalar> y(a.shape(), (a.value().array() + b.value().array()).eval());
  return a.graph->record(OpKind::kAdd, {a, b}, std::move(y),
                         [](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                           if (gin[0]) gin[0]->array() += g.array();
                           if (gin[1]) gin[1]->array() += g.array();
                         });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape("sub", a, b);
  Tensor<Scalar> y(a.shape(), (a.value().array() - b.value().array()).eval());
  return a.graph->record(OpKind::kSub, {a, b}, std::move(y),
                         [](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                           if (gin[0]) gin[0]->array() += g.array();
                           if (gin[1]) gin[1]->array() -= g.array();
                         });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape("mul", a, b);
  Tensor<Scalar> y(a.shape(), (a.value().array() * b.value().array()).eval());
  return a.graph->record(OpKind::kMul, {a, b}, std::move(y),
                         [a, b](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                           if (gin[0]) gin[0]->array() += g.array() * b.value().array();
                           if (gin[1]) gin[1]->array() += g.array() * a.value().array();
                         });
}

template <typename Scalar>
Var<Scalar> div(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape("div", a, b);
  Tensor<Scalar> y(a.shape(), (a.value().array() / b.value().array()).eval());
  return a.graph->record(OpKind::kDiv, {a, b}, std::move(y),
                         [a, b](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                           const auto& bv = b.value().array();
                           if (gin[0]) gin[0]->array() += g.array() / bv;
                           if (gin[1]) gin[1]->array() -= g.array() * a.value().array() / bv.square();
                         });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar factor) {
  Tensor<Scalar> y(x.shape(), (x.value().array() * factor).eval());
  return x.graph->record(OpKind::kScale, {x}, std::move(y),
                         [factor](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                           gin[0]->array() += g.array() * factor;
                         });
}

template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> x, Scalar offset) {
  Tensor<Scalar> y(x.shape(), (x.value().array() + offset).eval());
  return x.graph->record(OpKind::kAddScalar, {x}, std::move(y),
                         [](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                           gin[0]->array() += g.array();
                         });
}

template <typename Scalar>
Var<Scalar> log(Var<Scalar> x) {
  Tensor<Scalar> y(x.shape(), x.value().array().log().eval());
  return x.graph->record(OpKind::kLog, {x}, std::move(y),
                         [x](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                           gin[0]->array() += g.array() / x.value().array();
                         });
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  Tensor<Scalar> y(Shape{}, {x.value().array().sum()});
  return x.graph->record(OpKind::kSum, {x}, std::move(y),
                         [](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                           gin[0]->array() += g[0];
                         });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x) {
  const Index n = x.value().size();
  if (n == 0) throw ShapeError("mean: empty operand");
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(n));
}

template <typename Scalar>
Var<Scalar> sum_rows(Var<Scalar> x) {
  const auto& xs = x.shape();
  if (xs.empty()) throw ShapeError("sum_rows: operand must have at least one axis");
  const Index K = xs.back();
  const Index R = K == 0 ? 0 : x.value().size() / K;
  Shape os(xs.begin(), xs.end() - 1);
  Tensor<Scalar> y(os);
  y.array().matrix() = x.value().matrix(R, K).rowwise().sum();
  return x.graph->record(OpKind::kSumRows, {x}, std::move(y),
                         [R, K](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                           gin[0]->matrix(R, K).colwise() += g.array().matrix();
                         });
}

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape) {
  Tensor<Scalar> y = x.value().reshaped(std::move(shape));
  return x.graph->record(OpKind::kReshape, {x}, std::move(y),
                         [](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                           gin[0]->array() += g.array();
                         });
}

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts.front().shape();
  axis = normalize_axis("concat", axis, static_cast<Index>(first.size()));
  Shape os = first;
  os[static_cast<std::size_t>(axis)] = 0;
  std::vector<Index> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (static_cast<Index>(i) != axis && s[i] != first[i]) ok = false;
    if (!ok) throw ShapeError("concat: operand " + to_string(s) + " incompatible with " + to_string(first));
    extents.push_back(s[static_cast<std::size_t>(axis)]);
    os[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }
  const AxisSplit sp = split_at(os, axis);
  Tensor<Scalar> y(os);
  Index at = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Index chunk = extents[k] * sp.inner;
    for (Index o = 0; o < sp.outer; ++o)
      y.array().segment(o * sp.extent * sp.inner + at, chunk) = parts[k].value().array().segment(o * chunk, chunk);
    at += chunk;
  }
  return parts.front().graph->record(
      OpKind::kConcat, std::span<const Var<Scalar>>(parts), std::move(y),
      [sp, extents](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
        Index at = 0;
        for (std::size_t k = 0; k < extents.size(); ++k) {
          const Index chunk = extents[k] * sp.inner;
          if (gin[k])
            for (Index o = 0; o < sp.outer; ++o)
              gin[k]->array().segment(o * chunk, chunk) += g.array().segment(o * sp.extent * sp.inner + at, chunk);
          at += chunk;
        }
      });
}

template <typename Scalar>
Var<Scalar> index_rows(Var<Scalar> x, const std::vector<Index>& rows) {
  const auto& xs = x.shape();
  if (xs.empty()) throw ShapeError("index_rows: operand must have at least one axis");
  const Index R = xs[0];
  const Index inner = R == 0 ? 0 : x.value().size() / R;
  Shape os = xs;
  os[0] = static_cast<Index>(rows.size());
  Tensor<Scalar> y(os);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= R) throw ShapeError("index_rows: row index out of range");
    y.array().segment(static_cast<Index>(i) * inner, inner) = x.value().array().segment(rows[i] * inner, inner);
  }
  return x.graph->record(OpKind::kIndexRows, {x}, std::move(y),
                         [rows, inner](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                           for (std::size_t i = 0; i < rows.size(); ++i)
                             gin[0]->array().segment(rows[i] * inner, inner) +=
                                 g.array().segment(static_cast<Index>(i) * inner, inner);
                         });
}

template <typename Scalar>
Var<Scalar> normalize_rows(Var<Scalar> x, Scalar eps) {
  const auto& xs = x.shape();
  if (xs.size() != 2) throw ShapeError("normalize_rows: expects [R,K], got " + to_string(xs));
  const Index R = xs[0], K = xs[1];
  Eigen::Array<Scalar, Eigen::Dynamic, 1> denom = x.value().matrix(R, K).rowwise().sum().array() + eps;
  Tensor<Scalar> y(xs);
  y.matrix(R, K) = (x.value().matrix(R, K).array().colwise() / denom).matrix();
  Graph<Scalar>* graph = x.graph;
  const std::size_t self = graph->size();
  return graph->record(OpKind::kNormalizeRows, {x}, std::move(y),
                       [graph, self, denom, R, K](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                         const auto Y = graph->node(self).value.matrix(R, K);
                         const auto G = g.matrix(R, K);
                         // d/dx_j of x_j / (s + eps): (g_j - <g, y>) / (s + eps)
                         const Eigen::Array<Scalar, Eigen::Dynamic, 1> dot = (G.array() * Y.array()).rowwise().sum();
                         gin[0]->matrix(R, K).array() += (G.array().colwise() - dot).colwise() / denom;
                       });
}

template <typename Scalar>
Var<Scalar> bce_with_logits(Var<Scalar> logits, const Tensor<Scalar>& target) {
  if (logits.shape() != target.shape())
    throw ShapeError("bce_with_logits: logits " + to_string(logits.shape()) + " vs target " + to_string(target.shape()));
  const auto& z = logits.value().array();
  Tensor<Scalar> y(logits.shape());
  y.array() = z.max(Scalar(0)) - z * target.array() + (Scalar(1) + (-z.abs()).exp()).log();
  return logits.graph->record(OpKind::kBceWithLogits, {logits}, std::move(y),
                              [logits, target](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gin) {
                                const auto s = kernels::sigmoid(logits.value());
                                gin[0]->array() += g.array() * (s.array() - target.array());
                              });
}

#define SPSEG_INSTANTIATE(S)                                                         \
  template Tensor<S> kernels::sigmoid<S>(const Tensor<S>&);                          \
  template Var<S> relu<S>(Var<S>);                                                   \
  template Var<S> sigmoid<S>(Var<S>);                                                \
  template Var<S> softmax<S>(Var<S>, Index);                                         \
  template Var<S> activation<S>(Activation, Var<S>, std::optional<Index>);           \
  template Var<S> matmul<S>(Var<S>, Var<S>);                                         \
  template Var<S> linear<S>(Var<S>, Var<S>, Var<S>);                                 \
  template Var<S> transpose<S>(Var<S>);                                              \
  template Var<S> add<S>(Var<S>, Var<S>);                                            \
  template Var<S> sub<S>(Var<S>, Var<S>);                                            \
  template Var<S> mul<S>(Var<S>, Var<S>);                                            \
  template Var<S> div<S>(Var<S>, Var<S>);                                            \
  template Var<S> scale<S>(Var<S>, S);                                               \
  template Var<S> add_scalar<S>(Var<S>, S);                                          \
  template Var<S> log<S>(Var<S>);                                                    \
  template Var<S> sum<S>(Var<S>);                                                    \
  template Var<S> mean<S>(Var<S>);                                                   \
  template Var<S> sum_rows<S>(Var<S>);                                               \
  template Var<S> reshape<S>(Var<S>, Shape);                                         \
  template Var<S> concat<S>(const std::vector<Var<S>>&, Index);                      \
  template Var<S> index_rows<S>(Var<S>, const std::vector<Index>&);                  \
  template Var<S> normalize_rows<S>(Var<S>, S);                                      \
  template Var<S> bce_with_logits<S>(Var<S>, const Tensor<S>&);

SPSEG_INSTANTIATE(float)
SPSEG_INSTANTIATE(double)
#undef SPSEG_INSTANTIATE

}  // namespace spseg
