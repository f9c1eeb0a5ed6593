#include "spseg/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace spseg {

Eigen::MatrixXd pairwise_cost(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& soft, const Eigen::MatrixXd& gt,
                              const std::vector<Index>& classes, const MatchCostConfig& cfg) {
  const Index n = soft.rows(), g = gt.rows();
  if (probs.rows() != n || soft.cols() != gt.cols() || static_cast<Index>(classes.size()) != g)
    throw ShapeError("pairwise_cost: inconsistent prediction/ground-truth extents");
  const Eigen::MatrixXd inter = soft * gt.transpose();
  const Eigen::VectorXd soft_sum = soft.rowwise().sum(), gt_sum = gt.rowwise().sum();
  Eigen::MatrixXd cost(n, g);
  for (Index j = 0; j < g; ++j) {
    const Index c = classes[static_cast<std::size_t>(j)];
    if (c < 0 || c >= probs.cols()) throw ShapeError("pairwise_cost: class id " + std::to_string(c) + " out of range");
    for (Index i = 0; i < n; ++i) {
      const double dice = (2.0 * inter(i, j) + kDiceEps) / (soft_sum(i) + gt_sum(j) + kDiceEps);
      cost(i, j) = -std::pow(probs(i, c), cfg.alpha) * std::pow(dice, cfg.beta);
    }
  }
  return cost;
}

std::vector<Index> Assignment::prediction_for_gt(Index num_gt) const {
  std::vector<Index> out(static_cast<std::size_t>(num_gt), -1);
  for (const auto& [p, g] : pairs) out.at(static_cast<std::size_t>(g)) = p;
  return out;
}

Assignment hungarian(const Eigen::MatrixXd& cost) {
  const Index rows = cost.rows(), cols = cost.cols();
  if (rows < cols)
    throw ShapeError("hungarian: needs rows >= cols, got " + std::to_string(rows) + "x" + std::to_string(cols));
  if (!cost.allFinite()) throw std::domain_error("hungarian: cost matrix has non-finite entries");

  // Columns (ground truths) are the side that gets fully assigned; they play
  // the "worker" role of the classic formulation, rows are the "jobs".
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(cols + 1)), v(static_cast<std::size_t>(rows + 1));
  std::vector<Index> owner(static_cast<std::size_t>(rows + 1), 0), way(static_cast<std::size_t>(rows + 1), 0);
  std::vector<double> minv(static_cast<std::size_t>(rows + 1));
  std::vector<char> used(static_cast<std::size_t>(rows + 1));
  auto at = [](auto& vec, Index i) -> auto& { return vec[static_cast<std::size_t>(i)]; };

  for (Index worker = 1; worker <= cols; ++worker) {
    at(owner, 0) = worker;
    Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      at(used, j0) = 1;
      const Index i0 = at(owner, j0);
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= rows; ++j) {
        if (at(used, j)) continue;
        const double cur = cost(j - 1, i0 - 1) - at(u, i0) - at(v, j);
        if (cur < at(minv, j)) {
          at(minv, j) = cur;
          at(way, j) = j0;
        }
        if (at(minv, j) < delta) {
          delta = at(minv, j);
          j1 = j;
        }
      }
      for (Index j = 0; j <= rows; ++j) {
        if (at(used, j)) {
          at(u, at(owner, j)) += delta;
          at(v, j) -= delta;
        } else {
          at(minv, j) -= delta;
        }
      }
      j0 = j1;
    } while (at(owner, j0) != 0);
    do {
      const Index j1 = at(way, j0);
      at(owner, j0) = at(owner, j1);
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment a;
  for (Index j = 1; j <= rows; ++j) {
    if (at(owner, j) != 0)
      a.pairs.emplace_back(j - 1, at(owner, j) - 1);
    else
      a.unmatched.push_back(j - 1);
  }
  return a;
}

double assignment_cost(const Eigen::MatrixXd& cost, const Assignment& a) {
  double total = 0;
  for (const auto& [p, g] : a.pairs) total += cost(p, g);
  return total;
}

void LossWeights::validate() const {
  for (double w : {cls, dice, bce, obj})
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
}

namespace {

void check_assignment(const Assignment& a, Index n, Index g) {
  std::vector<char> pred_seen(static_cast<std::size_t>(n)), gt_seen(static_cast<std::size_t>(g));
  auto fail = [] { throw ConfigError("compute_loss: assignment inconsistent with prediction/ground-truth counts"); };
  if (static_cast<Index>(a.pairs.size()) != g || static_cast<Index>(a.pairs.size() + a.unmatched.size()) != n) fail();
  for (const auto& [p, q] : a.pairs) {
    if (p < 0 || p >= n || q < 0 || q >= g || pred_seen[static_cast<std::size_t>(p)] ||
        gt_seen[static_cast<std::size_t>(q)])
      fail();
    pred_seen[static_cast<std::size_t>(p)] = 1;
    gt_seen[static_cast<std::size_t>(q)] = 1;
  }
  for (Index p : a.unmatched) {
    if (p < 0 || p >= n || pred_seen[static_cast<std::size_t>(p)]) fail();
    pred_seen[static_cast<std::size_t>(p)] = 1;
  }
}

}  // namespace

template <typename Scalar>
LossBreakdown<Scalar> compute_loss(Var<Scalar> class_logits, Var<Scalar> objectness_logits, Var<Scalar> mask_logits,
                                   const InstanceTargets<Scalar>& targets, const Assignment& assignment,
                                   const LossWeights& weights, const Tensor<Scalar>* objectness_target) {
  weights.validate();
  Graph<Scalar>& graph = *class_logits.graph;
  const Index n = class_logits.dim(0), k = class_logits.dim(1), g = targets.count();
  if (mask_logits.shape().size() != 3 || mask_logits.dim(0) != n || objectness_logits.dim(0) != n)
    throw ShapeError("compute_loss: prediction tensors disagree on the slot count");
  if (g > 0 && (targets.masks.rank() != 3 || targets.masks.dim(0) != g))
    throw ShapeError("compute_loss: target masks " + to_string(targets.masks.shape()) + " for " + std::to_string(g) +
                     " instances");
  check_assignment(assignment, n, g);
  const Scalar norm = static_cast<Scalar>(std::max<Index>(g, 1));

  Tensor<Scalar> cls_target({n, k});
  for (const auto& [p, q] : assignment.pairs) cls_target(p, targets.classes[static_cast<std::size_t>(q)]) = 1;
  auto cls = scale(sum(bce_with_logits(class_logits, cls_target)), Scalar(1) / norm);

  Tensor<Scalar> obj_target({n, 1});
  Var<Scalar> dice_term = graph.constant(Tensor<Scalar>(Shape{}));
  Var<Scalar> bce_term = dice_term;
  if (g > 0) {
    const Index H = targets.masks.dim(1), W = targets.masks.dim(2);
    const auto rows = assignment.prediction_for_gt(g);
    auto up = upsample_bilinear(index_rows(mask_logits, rows), {H, W});
    auto flat = reshape(up, {g, H * W});
    const Tensor<Scalar> t = targets.masks.reshaped({g, H * W});
    auto p = sigmoid(flat);
    Tensor<Scalar> t_sum({g});
    t_sum.array() = t.matrix(g, H * W).rowwise().sum().array();
    auto dice = div(add_scalar(scale(sum_rows(mul(p, graph.constant(t))), Scalar(2)), Scalar(kDiceEps)),
                    add_scalar(add(sum_rows(p), graph.constant(t_sum)), Scalar(kDiceEps)));
    dice_term = add_scalar(scale(mean(dice), Scalar(-1)), Scalar(1));
    bce_term = mean(bce_with_logits(flat, t));
    for (Index q = 0; q < g; ++q) obj_target(rows[static_cast<std::size_t>(q)], 0) = dice.value()[q];
  }
  if (objectness_target) {
    if (objectness_target->shape() != obj_target.shape())
      throw ShapeError("compute_loss: objectness target " + to_string(objectness_target->shape()));
    obj_target = *objectness_target;
  }
  auto obj = scale(sum(bce_with_logits(objectness_logits, obj_target)), Scalar(1) / norm);

  auto total = add(add(scale(cls, Scalar(weights.cls)), scale(dice_term, Scalar(weights.dice))),
                   add(scale(bce_term, Scalar(weights.bce)), scale(obj, Scalar(weights.obj))));
  LossBreakdown<Scalar> out{total, 0, 0, 0, 0, {}};
  out.cls = weights.cls * static_cast<double>(cls.value()[0]);
  out.dice = weights.dice * static_cast<double>(dice_term.value()[0]);
  out.bce = weights.bce * static_cast<double>(bce_term.value()[0]);
  out.obj = weights.obj * static_cast<double>(obj.value()[0]);
  out.objectness_target = std::move(obj_target);
  return out;
}

template <typename Scalar>
Assignment match_predictions(const Tensor<Scalar>& class_logits, const Tensor<Scalar>& mask_logits,
                             const InstanceTargets<Scalar>& targets, const MatchCostConfig& cfg) {
  const Index n = mask_logits.dim(0), h = mask_logits.dim(1), w = mask_logits.dim(2), g = targets.count();
  if (g > n)
    throw ConfigError("match_predictions: " + std::to_string(g) + " ground-truth instances exceed " +
                      std::to_string(n) + " prediction slots");
  if (g == 0) {
    Assignment a;
    for (Index i = 0; i < n; ++i) a.unmatched.push_back(i);
    return a;
  }
  const Index H = targets.masks.dim(1), W = targets.masks.dim(2);
  if (H % h != 0 || W % w != 0)
    throw ShapeError("match_predictions: target extent is not a multiple of the mask resolution");
  const Index fy = H / h, fx = W / w;
  Eigen::MatrixXd gt = Eigen::MatrixXd::Zero(g, h * w);
  for (Index q = 0; q < g; ++q)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) gt(q, (y / fy) * w + x / fx) += static_cast<double>(targets.masks(q, y, x));
  gt /= static_cast<double>(fy * fx);

  const Tensor<Scalar> cls_prob = kernels::sigmoid(class_logits);
  const Tensor<Scalar> soft = kernels::sigmoid(mask_logits);
  const Eigen::MatrixXd probs = cls_prob.matrix(n, class_logits.dim(1)).template cast<double>();
  const Eigen::MatrixXd soft_flat = soft.matrix(n, h * w).template cast<double>();
  return hungarian(pairwise_cost(probs, soft_flat, gt, targets.classes, cfg));
}

#define SPSEG_INSTANTIATE(S)                                                                                     \
  template LossBreakdown<S> compute_loss<S>(Var<S>, Var<S>, Var<S>, const InstanceTargets<S>&, const Assignment&, \
                                            const LossWeights&, const Tensor<S>*);                                                 \
  template Assignment match_predictions<S>(const Tensor<S>&, const Tensor<S>&, const InstanceTargets<S>&,        \
                                           const MatchCostConfig&);
SPSEG_INSTANTIATE(float)
SPSEG_INSTANTIATE(double)
#undef SPSEG_INSTANTIATE

}  // namespace spseg
