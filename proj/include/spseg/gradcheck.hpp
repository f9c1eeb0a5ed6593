#pragma once

#include "spseg/graph.hpp"
#include "spseg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace spseg {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::string worst;  // "<param>[<flat index>]" of the largest error
};

/// Relative error with a floor on the denominator so that coordinates whose
/// true gradient is ~0 are judged on absolute error.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backward() against central differences of `loss_fn`, which must
/// build a scalar loss on the graph it is handed using `params`.
/// `samples == 0` checks every coordinate; otherwise that many coordinates
/// are drawn uniformly (seeded) across all parameters.
template <typename LossFn>
GradCheckResult check_gradients(ParamSet<double>& params, LossFn&& loss_fn, double eps = 1e-4,
                                std::size_t samples = 0, std::uint64_t seed = 7) {
  params.zero_grad();
  {
    Graph<double> g;
    auto loss = loss_fn(g);
    g.backward(loss);
  }

  auto eval = [&]() {
    Graph<double> g(false);
    return loss_fn(g).value()[0];
  };

  std::vector<std::pair<Parameter<double>*, Index>> coords;
  if (samples == 0) {
    for (auto& p : params)
      if (p.requires_grad)
        for (Index i = 0; i < p.value.size(); ++i) coords.emplace_back(&p, i);
  } else {
    std::vector<Parameter<double>*> pool;
    std::vector<Index> offsets;
    Index total = 0;
    for (auto& p : params) {
      if (!p.requires_grad) continue;
      pool.push_back(&p);
      offsets.push_back(total);
      total += p.value.size();
    }
    Rng rng(seed);
    for (std::size_t s = 0; s < samples && total > 0; ++s) {
      const Index flat = rng.uniform_int(0, total - 1);
      const auto k = static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1);
      coords.emplace_back(pool[k], flat - offsets[k]);
    }
  }

  GradCheckResult result;
  for (auto [p, i] : coords) {
    const double saved = p->value[i];
    p->value[i] = saved + eps;
    const double up = eval();
    p->value[i] = saved - eps;
    const double down = eval();
    p->value[i] = saved;
    const double numeric = (up - down) / (2 * eps);
    const double err = relative_error((*p->grad)[i], numeric);
    ++result.checked;
    if (err > result.max_rel_error || result.worst.empty()) {
      result.max_rel_error = std::max(result.max_rel_error, err);
      if (err >= result.max_rel_error) result.worst = p->name + "[" + std::to_string(i) + "]";
    }
  }
  return result;
}

}  // namespace spseg
