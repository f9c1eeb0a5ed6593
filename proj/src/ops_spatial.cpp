#include "spseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace spseg {
namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  Index batch, channels, height, width;
  Index filters, kh, kw;
  Index stride, pad;
  Index out_h, out_w;

  Index patch() const { return channels * kh * kw; }
  Index out_pixels() const { return out_h * out_w; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename Scalar>
void im2col(const Scalar* img, const ConvGeometry& g, RowMatrix<Scalar>& col) {
  col.resize(g.patch(), g.out_pixels());
  for (Index c = 0; c < g.channels; ++c) {
    const Scalar* plane = img + c * g.height * g.width;
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        Scalar* row = col.data() + ((c * g.kh + ki) * g.kw + kj) * g.out_pixels();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki;
          Scalar* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + iy * g.width;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.pad + kj;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& col, const ConvGeometry& g, Scalar* img) {
  for (Index c = 0; c < g.channels; ++c) {
    Scalar* plane = img + c * g.height * g.width;
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        const Scalar* row = col.data() + ((c * g.kh + ki) * g.kw + kj) * g.out_pixels();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.height) continue;
          const Scalar* src = row + oy * g.out_w;
          Scalar* dst = plane + iy * g.width;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Bin edges for adaptive pooling along one axis.
inline Index bin_begin(Index i, Index in, Index out) { return (i * in) / out; }
inline Index bin_end(Index i, Index in, Index out) { return ((i + 1) * in + out - 1) / out; }

struct Interp {
  std::vector<Index> lo, hi;
  std::vector<double> w_hi;
};

Interp bilinear_table(Index in, Index out) {
  Interp t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.w_hi.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    Index lo = static_cast<Index>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    t.lo[o] = lo;
    t.hi[o] = std::min(lo + 1, in - 1);
    t.w_hi[o] = src - static_cast<double>(lo);
  }
  return t;
}

Index outer_planes(const Shape& s) {
  Index n = 1;
  for (std::size_t i = 0; i + 2 < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias, Index stride, Index pad) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 4) throw ShapeError("conv2d: input must be [N,C,H,W], got " + to_string(xs));
  if (ws.size() != 4) throw ShapeError("conv2d: weight must be [K,C,kh,kw], got " + to_string(ws));
  if (ws[1] != xs[1])
    throw ShapeError("conv2d: weight " + to_string(ws) + " expects " + std::to_string(ws[1]) +
                     " input channels, input " + to_string(xs) + " has " + std::to_string(xs[1]));
  if (bias.shape() != Shape{ws[0]})
    throw ShapeError("conv2d: bias must be [" + std::to_string(ws[0]) + "], got " + to_string(bias.shape()));
  if (ws[2] % 2 == 0 || ws[3] % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd, got " + to_string(ws));
  if (stride < 1) throw ConfigError("conv2d: stride must be positive");
  if (pad < 0) throw ConfigError("conv2d: pad must be non-negative");
  if (xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3])
    throw ShapeError("conv2d: padded input " + to_string(xs) + " smaller than kernel " + to_string(ws));

  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, pad, 0, 0};
  g.out_h = conv_out_extent(g.height, g.kh, stride, pad);
  g.out_w = conv_out_extent(g.width, g.kw, stride, pad);

  const auto& X = x.value();
  const auto W = weight.value().matrix(g.filters, g.patch());
  const auto& B = bias.value().array();
  Tensor<Scalar> out({g.batch, g.filters, g.out_h, g.out_w});

  const bool keep_cols = x.graph->grad_enabled() && (x.graph->needs_grad(weight));
  auto cols = std::make_shared<std::vector<RowMatrix<Scalar>>>();
  if (!g.pointwise() && keep_cols) cols->resize(static_cast<std::size_t>(g.batch));
  RowMatrix<Scalar> scratch;

  const Index in_plane = g.channels * g.height * g.width;
  const Index out_plane = g.filters * g.out_pixels();
  for (Index n = 0; n < g.batch; ++n) {
    auto Y = out.matrix(g.filters, g.out_pixels(), n * out_plane);
    if (g.pointwise()) {
      Y.noalias() = W * X.matrix(g.channels, g.out_pixels(), n * in_plane);
    } else {
      RowMatrix<Scalar>& col = keep_cols ? (*cols)[static_cast<std::size_t>(n)] : scratch;
      im2col(X.data() + n * in_plane, g, col);
      Y.noalias() = W * col;
    }
    Y.colwise() += B.matrix();
  }

  Graph<Scalar>* graph = x.graph;
  return graph->record(
      OpKind::kConv2d, {x, weight, bias}, std::move(out),
      [g, x, weight, cols](const Tensor<Scalar>& gout, std::span<Tensor<Scalar>* const> gin) {
        const auto& X = x.value();
        const auto W = weight.value().matrix(g.filters, g.patch());
        const Index in_plane = g.channels * g.height * g.width;
        const Index out_plane = g.filters * g.out_pixels();
        RowMatrix<Scalar> col, dcol;
        for (Index n = 0; n < g.batch; ++n) {
          const auto G = gout.matrix(g.filters, g.out_pixels(), n * out_plane);
          if (gin[2]) gin[2]->array().matrix() += G.rowwise().sum();
          if (gin[1]) {
            auto dW = gin[1]->matrix(g.filters, g.patch());
            if (g.pointwise()) {
              dW.noalias() += G * X.matrix(g.channels, g.out_pixels(), n * in_plane).transpose();
            } else if (!cols->empty()) {
              dW.noalias() += G * (*cols)[static_cast<std::size_t>(n)].transpose();
            } else {
              im2col(X.data() + n * in_plane, g, col);
              dW.noalias() += G * col.transpose();
            }
          }
          if (gin[0]) {
            if (g.pointwise()) {
              gin[0]->matrix(g.channels, g.out_pixels(), n * in_plane).noalias() += W.transpose() * G;
            } else {
              dcol.noalias() = W.transpose() * G;
              col2im_add(dcol, g, gin[0]->data() + n * in_plane);
            }
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> pool2d(PoolKind kind, Var<Scalar> x, Extent2 out) {
  const auto& xs = x.shape();
  if (xs.size() < 2) throw ShapeError("pool2d: input needs two spatial axes, got " + to_string(xs));
  const Index H = xs[xs.size() - 2], W = xs[xs.size() - 1];
  if (out.height <= 0 || out.width <= 0) throw ShapeError("pool2d: output extent must be positive");
  if (out.height > H || out.width > W)
    throw ShapeError("pool2d: output " + std::to_string(out.height) + "x" + std::to_string(out.width) +
                     " exceeds input " + to_string(xs));
  if (kind != PoolKind::kAdaptiveAvg && (H % out.height != 0 || W % out.width != 0))
    throw ShapeError("pool2d: fixed-window pooling needs extents divisible by the output, got " + to_string(xs));

  Shape os = xs;
  os[os.size() - 2] = out.height;
  os[os.size() - 1] = out.width;
  const Index planes = outer_planes(xs);
  Tensor<Scalar> y(os);
  // argmax offsets within each plane, for max pooling
  auto argmax = std::make_shared<std::vector<Index>>();
  if (kind == PoolKind::kMax) argmax->resize(static_cast<std::size_t>(y.size()));

  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = x.value().data() + p * H * W;
    for (Index i = 0; i < out.height; ++i) {
      const Index r0 = bin_begin(i, H, out.height), r1 = bin_end(i, H, out.height);
      for (Index j = 0; j < out.width; ++j) {
        const Index c0 = bin_begin(j, W, out.width), c1 = bin_end(j, W, out.width);
        const Index o = (p * out.height + i) * out.width + j;
        if (kind == PoolKind::kMax) {
          Index best = r0 * W + c0;
          for (Index r = r0; r < r1; ++r)
            for (Index c = c0; c < c1; ++c)
              if (src[r * W + c] > src[best]) best = r * W + c;
          y[o] = src[best];
          (*argmax)[static_cast<std::size_t>(o)] = best;
        } else {
          Scalar acc = 0;
          for (Index r = r0; r < r1; ++r)
            for (Index c = c0; c < c1; ++c) acc += src[r * W + c];
          y[o] = acc / static_cast<Scalar>((r1 - r0) * (c1 - c0));
        }
      }
    }
  }

  return x.graph->record(
      OpKind::kPool2d, {x}, std::move(y),
      [kind, planes, H, W, out, argmax](const Tensor<Scalar>& gout, std::span<Tensor<Scalar>* const> gin) {
        Tensor<Scalar>& gx = *gin[0];
        for (Index p = 0; p < planes; ++p) {
          Scalar* dst = gx.data() + p * H * W;
          for (Index i = 0; i < out.height; ++i) {
            const Index r0 = bin_begin(i, H, out.height), r1 = bin_end(i, H, out.height);
            for (Index j = 0; j < out.width; ++j) {
              const Index c0 = bin_begin(j, W, out.width), c1 = bin_end(j, W, out.width);
              const Index o = (p * out.height + i) * out.width + j;
              if (kind == PoolKind::kMax) {
                dst[(*argmax)[static_cast<std::size_t>(o)]] += gout[o];
              } else {
                const Scalar share = gout[o] / static_cast<Scalar>((r1 - r0) * (c1 - c0));
                for (Index r = r0; r < r1; ++r)
                  for (Index c = c0; c < c1; ++c) dst[r * W + c] += share;
              }
            }
          }
        }
      });
}

namespace kernels {

template <typename Scalar>
Tensor<Scalar> upsample_bilinear(const Tensor<Scalar>& x, Extent2 out) {
  const auto& xs = x.shape();
  if (xs.size() < 2) throw ShapeError("upsample_bilinear: input needs two spatial axes, got " + to_string(xs));
  if (out.height < 1 || out.width < 1) throw ShapeError("upsample_bilinear: output extent must be at least 1x1");
  const Index H = xs[xs.size() - 2], W = xs[xs.size() - 1];
  if (H < 1 || W < 1) throw ShapeError("upsample_bilinear: empty input " + to_string(xs));
  Shape os = xs;
  os[os.size() - 2] = out.height;
  os[os.size() - 1] = out.width;
  Tensor<Scalar> y(os);
  if (out.height == H && out.width == W) {
    y.array() = x.array();
    return y;
  }
  const Interp ty = bilinear_table(H, out.height), tx = bilinear_table(W, out.width);
  const Index planes = outer_planes(xs);
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = x.data() + p * H * W;
    Scalar* dst = y.data() + p * out.height * out.width;
    for (Index i = 0; i < out.height; ++i) {
      const Scalar wy = static_cast<Scalar>(ty.w_hi[i]);
      const Scalar* r0 = src + ty.lo[i] * W;
      const Scalar* r1 = src + ty.hi[i] * W;
      for (Index j = 0; j < out.width; ++j) {
        const Scalar wx = static_cast<Scalar>(tx.w_hi[j]);
        const Scalar top = r0[tx.lo[j]] * (1 - wx) + r0[tx.hi[j]] * wx;
        const Scalar bot = r1[tx.lo[j]] * (1 - wx) + r1[tx.hi[j]] * wx;
        dst[i * out.width + j] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return y;
}

}  // namespace kernels

template <typename Scalar>
Var<Scalar> upsample_bilinear(Var<Scalar> x, Extent2 out) {
  Tensor<Scalar> y = kernels::upsample_bilinear(x.value(), out);
  const auto& xs = x.shape();
  const Index H = xs[xs.size() - 2], W = xs[xs.size() - 1];
  const Index planes = outer_planes(xs);
  return x.graph->record(
      OpKind::kUpsample, {x}, std::move(y),
      [H, W, out, planes](const Tensor<Scalar>& gout, std::span<Tensor<Scalar>* const> gin) {
        Tensor<Scalar>& gx = *gin[0];
        if (out.height == H && out.width == W) {
          gx.array() += gout.array();
          return;
        }
        const Interp ty = bilinear_table(H, out.height), tx = bilinear_table(W, out.width);
        for (Index p = 0; p < planes; ++p) {
          const Scalar* g = gout.data() + p * out.height * out.width;
          Scalar* dst = gx.data() + p * H * W;
          for (Index i = 0; i < out.height; ++i) {
            const Scalar wy = static_cast<Scalar>(ty.w_hi[i]);
            Scalar* r0 = dst + ty.lo[i] * W;
            Scalar* r1 = dst + ty.hi[i] * W;
            for (Index j = 0; j < out.width; ++j) {
              const Scalar wx = static_cast<Scalar>(tx.w_hi[j]);
              const Scalar v = g[i * out.width + j];
              r0[tx.lo[j]] += v * (1 - wy) * (1 - wx);
              r0[tx.hi[j]] += v * (1 - wy) * wx;
              r1[tx.lo[j]] += v * wy * (1 - wx);
              r1[tx.hi[j]] += v * wy * wx;
            }
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> group_norm(Var<Scalar> x, Index groups, Var<Scalar> gain, Var<Scalar> shift, Scalar eps) {
  const auto& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("group_norm: input must be [N,C,H,W], got " + to_string(xs));
  if (groups < 1 || xs[1] % groups != 0)
    throw ConfigError("group_norm: " + std::to_string(xs[1]) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  if (gain.shape() != Shape{xs[1]} || shift.shape() != Shape{xs[1]})
    throw ShapeError("group_norm: gain/shift must be [" + std::to_string(xs[1]) + "]");

  const Index N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  const Index cpg = C / groups, M = cpg * HW;
  auto xhat = std::make_shared<Tensor<Scalar>>(xs);
  auto inv_std = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(N * groups));
  Tensor<Scalar> y(xs);
  const auto& gv = gain.value();
  const auto& sv = shift.value();
  for (Index n = 0; n < N; ++n) {
    for (Index g = 0; g < groups; ++g) {
      const Index off = (n * C + g * cpg) * HW;
      const auto seg = x.value().array().segment(off, M);
      const Scalar mu = seg.mean();
      const Scalar var = (seg - mu).square().mean();
      const Scalar is = Scalar(1) / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::size_t>(n * groups + g)] = is;
      xhat->array().segment(off, M) = (seg - mu) * is;
      for (Index c = 0; c < cpg; ++c) {
        const Index ch = g * cpg + c;
        y.array().segment(off + c * HW, HW) = xhat->array().segment(off + c * HW, HW) * gv[ch] + sv[ch];
      }
    }
  }

  return x.graph->record(
      OpKind::kGroupNorm, {x, gain, shift}, std::move(y),
      [N, C, HW, groups, cpg, M, xhat, inv_std, gain](const Tensor<Scalar>& gout,
                                                       std::span<Tensor<Scalar>* const> gin) {
        const auto& gv = gain.value();
        Eigen::Array<Scalar, Eigen::Dynamic, 1> dxhat(M);
        for (Index n = 0; n < N; ++n) {
          for (Index g = 0; g < groups; ++g) {
            const Index off = (n * C + g * cpg) * HW;
            for (Index c = 0; c < cpg; ++c) {
              const Index ch = g * cpg + c;
              const auto go = gout.array().segment(off + c * HW, HW);
              const auto xh = xhat->array().segment(off + c * HW, HW);
              if (gin[1]) (*gin[1])[ch] += (go * xh).sum();
              if (gin[2]) (*gin[2])[ch] += go.sum();
              dxhat.segment(c * HW, HW) = go * gv[ch];
            }
            if (gin[0]) {
              const auto xh = xhat->array().segment(off, M);
              const Scalar m1 = dxhat.mean();
              const Scalar m2 = (dxhat * xh).mean();
              gin[0]->array().segment(off, M) += (dxhat - m1 - xh * m2) * (*inv_std)[static_cast<std::size_t>(n * groups + g)];
            }
          }
        }
      });
}

#define SPSEG_INSTANTIATE(S)                                                                      \
  template Var<S> conv2d<S>(Var<S>, Var<S>, Var<S>, Index, Index);                                \
  template Var<S> pool2d<S>(PoolKind, Var<S>, Extent2);                                           \
  template Var<S> upsample_bilinear<S>(Var<S>, Extent2);                                          \
  template Var<S> group_norm<S>(Var<S>, Index, Var<S>, Var<S>, S);                                \
  template Tensor<S> kernels::upsample_bilinear<S>(const Tensor<S>&, Extent2);

SPSEG_INSTANTIATE(float)
SPSEG_INSTANTIATE(double)
#undef SPSEG_INSTANTIATE

}  // namespace spseg
