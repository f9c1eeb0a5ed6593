#pragma once

#include "spseg/graph.hpp"
#include "spseg/rng.hpp"

#include <algorithm>
#include <vector>

namespace spseg::test {

template <typename Scalar = double>
Tensor<Scalar> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

// Independent bilinear sampler (align-corners=false), written pixel by pixel.
inline double reference_bilinear(const std::vector<std::vector<double>>& img, int out_h, int out_w, int i, int j) {
  const int in_h = static_cast<int>(img.size()), in_w = static_cast<int>(img[0].size());
  auto coord = [](int o, int in, int out) {
    double c = (o + 0.5) * in / out - 0.5;
    return c < 0 ? 0.0 : c;
  };
  const double y = coord(i, in_h, out_h), x = coord(j, in_w, out_w);
  const int y0 = std::min(static_cast<int>(y), in_h - 1), x0 = std::min(static_cast<int>(x), in_w - 1);
  const int y1 = std::min(y0 + 1, in_h - 1), x1 = std::min(x0 + 1, in_w - 1);
  const double fy = y - y0, fx = x - x0;
  return img[y0][x0] * (1 - fy) * (1 - fx) + img[y0][x1] * (1 - fy) * fx + img[y1][x0] * fy * (1 - fx) +
         img[y1][x1] * fy * fx;
}

}  // namespace spseg::test
