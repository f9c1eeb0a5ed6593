#pragma once

#include "spseg/graph.hpp"
#include "spseg/ops.hpp"

#include <Eigen/Core>
#include <utility>
#include <vector>

namespace spseg {

inline constexpr double kDiceEps = 1e-6;

/// (2*sum(a*b) + eps) / (sum(a) + sum(b) + eps); a soft, b binary.
template <typename DerivedA, typename DerivedB>
double dice_coefficient(const Eigen::ArrayBase<DerivedA>& a, const Eigen::ArrayBase<DerivedB>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("dice_coefficient: extent mismatch");
  const double inter = (a.template cast<double>() * b.template cast<double>()).sum();
  const double total = a.template cast<double>().sum() + b.template cast<double>().sum();
  return (2.0 * inter + kDiceEps) / (total + kDiceEps);
}

/// Ground truth of one tile: G binary masks [G,H,W] (0/1 values) and their
/// class ids.
template <typename Scalar>
struct InstanceTargets {
  Tensor<Scalar> masks;
  std::vector<Index> classes;

  Index count() const { return static_cast<Index>(classes.size()); }
};

struct MatchCostConfig {
  double alpha = 0.8;
  double beta = 1.0;
};

/// cost[i,j] = -prob(i, class_j)^alpha * dice(soft_i, gt_j)^beta.
/// class_probs: [n,K]; soft_masks: [n,P] flattened probabilities;
/// gt_masks: [G,P] flattened.
Eigen::MatrixXd pairwise_cost(const Eigen::MatrixXd& class_probs, const Eigen::MatrixXd& soft_masks,
                              const Eigen::MatrixXd& gt_masks, const std::vector<Index>& gt_classes,
                              const MatchCostConfig& cfg = {});

struct Assignment {
  std::vector<std::pair<Index, Index>> pairs;  // (prediction, ground truth), ascending prediction index
  std::vector<Index> unmatched;                // prediction indices, ascending

  /// Prediction matched to each ground truth.
  std::vector<Index> prediction_for_gt(Index num_gt) const;
};

/// Minimum-total-cost assignment of every column to a distinct row
/// (rows >= cols). Shortest augmenting paths with potentials, O(cols^2 rows);
/// ties resolve towards the lowest row index.
Assignment hungarian(const Eigen::MatrixXd& cost);

double assignment_cost(const Eigen::MatrixXd& cost, const Assignment& a);

struct LossWeights {
  double cls = 2.0;
  double dice = 2.0;
  double bce = 2.0;
  double obj = 1.0;

  void validate() const;
};

template <typename Scalar>
struct LossBreakdown {
  Var<Scalar> total;
  double cls = 0, dice = 0, bce = 0, obj = 0;  // weighted components
  Tensor<Scalar> objectness_target;            // [n,1]
};

/// Set-prediction loss for one tile. mask_logits is the decoder output
/// [n,h,w]; matched rows are resized to the target extent before the mask
/// terms. Classification and objectness terms use sigmoid cross-entropy over
/// all slots (one-hot / background targets; objectness targets are the
/// detached dice of each matched pair, 0 elsewhere) and are divided by
/// max(G,1); dice and pixel BCE are averaged over matched pairs. A given
/// objectness_target replaces the dice-derived one.
template <typename Scalar>
LossBreakdown<Scalar> compute_loss(Var<Scalar> class_logits, Var<Scalar> objectness_logits, Var<Scalar> mask_logits,
                                   const InstanceTargets<Scalar>& targets, const Assignment& assignment,
                                   const LossWeights& weights, const Tensor<Scalar>* objectness_target = nullptr);

/// Matching of decoder outputs to targets, with the cost evaluated at the
/// decoder resolution against area-averaged targets.
template <typename Scalar>
Assignment match_predictions(const Tensor<Scalar>& class_logits, const Tensor<Scalar>& mask_logits,
                             const InstanceTargets<Scalar>& targets, const MatchCostConfig& cfg = {});

}  // namespace spseg
