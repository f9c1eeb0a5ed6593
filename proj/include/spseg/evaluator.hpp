#pragma once

#include "spseg/datagen.hpp"
#include "spseg/mask.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace spseg {

enum class Stratum { kAll, kSmall, kMedium, kLarge };

inline constexpr Index kSmallAreaLimit = 200;   // small: area < 200
inline constexpr Index kLargeAreaLimit = 450;   // large: area > 450

Stratum stratum_of(Index area);
const char* stratum_name(Stratum s);
/// Whether a mask of `area` pixels counts inside `s` (kAll takes everything).
bool in_stratum(Stratum s, Index area);

struct Prediction {
  std::string tile_id;
  double score = 0;
  Index class_id = 0;
  BinaryMask mask;
};

enum class MatchFlag { kTruePositive, kFalsePositive, kIgnored };

struct EvalMatch {
  std::vector<MatchFlag> flags;  // one per prediction, in the given order
  Index missed = 0;              // non-ignored ground truths left unclaimed
};

/// Greedy matching of one image. Predictions must already be in descending
/// score order; ious is [predictions x ground truths]. Each prediction takes
/// the highest-IoU unclaimed ground truth with IoU >= threshold, preferring
/// non-ignored ground truths; matching an ignored one, or matching nothing
/// while `pred_ignored` is set, marks the prediction ignored.
EvalMatch match_for_eval(const Eigen::MatrixXd& ious, double iou_threshold,
                         const std::vector<char>& gt_ignored = {}, const std::vector<char>& pred_ignored = {});

/// Area under the precision-recall curve after replacing every precision by
/// the maximum precision at equal or higher recall. 0 when total_gt is 0.
double average_precision(const std::vector<MatchFlag>& flags_in_score_order, Index total_gt);

struct PrPoint {
  double recall = 0, precision = 0;
};

struct StratumResult {
  double ap50 = 0;            // IoU 0.5
  double ap = 0;              // mean over IoU 0.50:0.05:0.95
  Index gt_count = 0;
  std::vector<PrPoint> curve;  // at IoU 0.5, one point per counted prediction
};

struct APReport {
  double ap50 = 0;  // all instances at the configured IoU threshold
  std::array<StratumResult, 4> strata;  // indexed by Stratum

  const StratumResult& at(Stratum s) const { return strata[static_cast<std::size_t>(s)]; }
  double ap_small() const { return at(Stratum::kSmall).ap; }
  double ap_medium() const { return at(Stratum::kMedium).ap; }
  double ap_large() const { return at(Stratum::kLarge).ap; }
  Index total_gt() const { return at(Stratum::kAll).gt_count; }
};

struct EvalConfig {
  double iou_threshold = 0.5;
  Index num_classes = 1;
};

/// COCO-style mask AP. Predictions are ranked by score with ties kept in
/// input order; classes are evaluated separately and averaged over the
/// classes that have ground truth.
APReport evaluate(const std::vector<Prediction>& predictions, const std::vector<const AnnotatedTile*>& tiles,
                  const EvalConfig& cfg = {});

/// key=value lines.
std::string report_text(const APReport& report);
/// stratum,recall,precision rows after a versioned comment line.
std::string pr_curve_csv(const APReport& report);

}  // namespace spseg
