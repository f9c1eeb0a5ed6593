#include "spseg/evaluator.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

namespace spseg {
namespace {

struct MaskInfo {
  const BinaryMask* mask;
  Index area = 0;
  Index top = 0, left = 0, bottom = -1, right = -1;  // inclusive box
};

MaskInfo describe(const BinaryMask& m) {
  MaskInfo info{&m};
  info.top = m.rows();
  info.left = m.cols();
  for (Index y = 0; y < m.rows(); ++y)
    for (Index x = 0; x < m.cols(); ++x)
      if (m(y, x)) {
        ++info.area;
        info.top = std::min(info.top, y);
        info.bottom = std::max(info.bottom, y);
        info.left = std::min(info.left, x);
        info.right = std::max(info.right, x);
      }
  return info;
}

double iou(const MaskInfo& a, const MaskInfo& b) {
  if (a.area == 0 || b.area == 0) return 0.0;
  const Index top = std::max(a.top, b.top), bottom = std::min(a.bottom, b.bottom);
  const Index left = std::max(a.left, b.left), right = std::min(a.right, b.right);
  Index inter = 0;
  if (top <= bottom && left <= right)
    inter = (a.mask->block(top, left, bottom - top + 1, right - left + 1).cast<Index>() *
             b.mask->block(top, left, bottom - top + 1, right - left + 1).cast<Index>())
                .sum();
  return static_cast<double>(inter) / static_cast<double>(a.area + b.area - inter);
}

constexpr std::array<Stratum, 4> kStrata{Stratum::kAll, Stratum::kSmall, Stratum::kMedium, Stratum::kLarge};

struct TileData {
  std::vector<Index> preds;  // indices into the prediction list, ranked
  std::vector<MaskInfo> pred_info;
  std::vector<MaskInfo> gt_info;
  Eigen::MatrixXd ious;
};

struct Ranked {
  double score;
  Index order;
  MatchFlag flag;
};

}  // namespace

Stratum stratum_of(Index area) {
  if (area < kSmallAreaLimit) return Stratum::kSmall;
  if (area > kLargeAreaLimit) return Stratum::kLarge;
  return Stratum::kMedium;
}

const char* stratum_name(Stratum s) {
  switch (s) {
    case Stratum::kAll: return "all";
    case Stratum::kSmall: return "small";
    case Stratum::kMedium: return "medium";
    case Stratum::kLarge: return "large";
  }
  return "?";
}

bool in_stratum(Stratum s, Index area) { return s == Stratum::kAll || stratum_of(area) == s; }

EvalMatch match_for_eval(const Eigen::MatrixXd& ious, double thr, const std::vector<char>& gt_ignored,
                         const std::vector<char>& pred_ignored) {
  const Index p = ious.rows(), g = ious.cols();
  auto gt_ign = [&](Index j) { return !gt_ignored.empty() && gt_ignored[static_cast<std::size_t>(j)]; };
  EvalMatch out;
  out.flags.assign(static_cast<std::size_t>(p), MatchFlag::kFalsePositive);
  std::vector<char> claimed(static_cast<std::size_t>(g), 0);
  for (Index i = 0; i < p; ++i) {
    Index best = -1;
    double best_iou = thr;
    bool best_ignored = true;
    for (Index j = 0; j < g; ++j) {
      if (claimed[static_cast<std::size_t>(j)]) continue;
      const bool ign = gt_ign(j);
      // once a regular ground truth is found, ignored ones cannot displace it
      if (best >= 0 && !best_ignored && ign) continue;
      const double v = ious(i, j);
      if (v < thr) continue;
      if (best < 0 || (best_ignored && !ign) || v > best_iou) {
        best = j;
        best_iou = v;
        best_ignored = ign;
      }
    }
    auto& flag = out.flags[static_cast<std::size_t>(i)];
    if (best >= 0) {
      claimed[static_cast<std::size_t>(best)] = 1;
      flag = best_ignored ? MatchFlag::kIgnored : MatchFlag::kTruePositive;
    } else if (!pred_ignored.empty() && pred_ignored[static_cast<std::size_t>(i)]) {
      flag = MatchFlag::kIgnored;
    }
  }
  for (Index j = 0; j < g; ++j)
    if (!claimed[static_cast<std::size_t>(j)] && !gt_ign(j)) ++out.missed;
  return out;
}

double average_precision(const std::vector<MatchFlag>& flags, Index total_gt) {
  if (total_gt <= 0) return 0.0;
  std::vector<double> precision;
  std::vector<char> is_tp;
  Index tp = 0, fp = 0;
  for (MatchFlag f : flags) {
    if (f == MatchFlag::kIgnored) continue;
    (f == MatchFlag::kTruePositive ? tp : fp) += 1;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    is_tp.push_back(f == MatchFlag::kTruePositive);
  }
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0;
  for (std::size_t k = 0; k < precision.size(); ++k)
    if (is_tp[k]) ap += precision[k];
  return ap / static_cast<double>(total_gt);
}

APReport evaluate(const std::vector<Prediction>& preds, const std::vector<const AnnotatedTile*>& tiles,
                  const EvalConfig& cfg) {
  if (cfg.num_classes < 1) throw ConfigError("evaluate: num_classes must be positive");
  std::map<std::string, std::size_t> tile_index;
  for (std::size_t t = 0; t < tiles.size(); ++t) tile_index.emplace(tiles[t]->tile_id, t);
  std::vector<std::string> unknown;
  for (const auto& p : preds)
    if (!tile_index.count(p.tile_id) && std::find(unknown.begin(), unknown.end(), p.tile_id) == unknown.end())
      unknown.push_back(p.tile_id);
  if (!unknown.empty()) {
    std::string list;
    for (const auto& id : unknown) list += (list.empty() ? "" : ", ") + id;
    throw ConfigError("evaluate: predictions reference unknown tiles: " + list);
  }

  std::vector<Index> ranked(preds.size());
  std::iota(ranked.begin(), ranked.end(), Index{0});
  std::stable_sort(ranked.begin(), ranked.end(), [&](Index a, Index b) {
    return preds[static_cast<std::size_t>(a)].score > preds[static_cast<std::size_t>(b)].score;
  });

  // per class, per tile
  std::vector<std::vector<TileData>> data(static_cast<std::size_t>(cfg.num_classes),
                                          std::vector<TileData>(tiles.size()));
  for (std::size_t t = 0; t < tiles.size(); ++t)
    for (const auto& inst : tiles[t]->instances) {
      if (inst.class_id < 0 || inst.class_id >= cfg.num_classes)
        throw ConfigError("evaluate: ground-truth class " + std::to_string(inst.class_id) + " out of range");
      auto& d = data[static_cast<std::size_t>(inst.class_id)][t];
      d.gt_info.push_back(describe(inst.mask));
    }
  for (Index r : ranked) {
    const auto& p = preds[static_cast<std::size_t>(r)];
    if (p.class_id < 0 || p.class_id >= cfg.num_classes)
      throw ConfigError("evaluate: predicted class " + std::to_string(p.class_id) + " out of range");
    const std::size_t t = tile_index.at(p.tile_id);
    const Extent2 e = tiles[t]->extent();
    if (p.mask.rows() != e.height || p.mask.cols() != e.width)
      throw ShapeError("evaluate: prediction mask extent differs from tile " + p.tile_id);
    auto& d = data[static_cast<std::size_t>(p.class_id)][t];
    d.preds.push_back(r);
    d.pred_info.push_back(describe(p.mask));
  }
  for (auto& per_class : data)
    for (auto& d : per_class) {
      d.ious.resize(static_cast<Index>(d.preds.size()), static_cast<Index>(d.gt_info.size()));
      for (Index i = 0; i < d.ious.rows(); ++i)
        for (Index j = 0; j < d.ious.cols(); ++j)
          d.ious(i, j) = iou(d.pred_info[static_cast<std::size_t>(i)], d.gt_info[static_cast<std::size_t>(j)]);
    }

  // AP over classes with ground truth; also returns counted flags for curves
  auto run = [&](Stratum s, double thr, std::vector<Ranked>* merged, Index* gt_total) {
    double sum = 0;
    Index classes_with_gt = 0;
    Index all_gt = 0;
    for (const auto& per_class : data) {
      std::vector<Ranked> flags;
      Index gt = 0;
      for (const auto& d : per_class) {
        std::vector<char> gi, pi;
        for (const auto& m : d.gt_info) gi.push_back(!in_stratum(s, m.area));
        for (const auto& m : d.pred_info) pi.push_back(!in_stratum(s, m.area));
        const auto match = match_for_eval(d.ious, thr, gi, pi);
        for (std::size_t i = 0; i < d.preds.size(); ++i)
          flags.push_back({preds[static_cast<std::size_t>(d.preds[i])].score, d.preds[i], match.flags[i]});
        gt += static_cast<Index>(std::count(gi.begin(), gi.end(), 0));
      }
      std::sort(flags.begin(), flags.end(), [](const Ranked& a, const Ranked& b) {
        return a.score != b.score ? a.score > b.score : a.order < b.order;
      });
      if (gt > 0) {
        std::vector<MatchFlag> f;
        for (const auto& r : flags) f.push_back(r.flag);
        sum += average_precision(f, gt);
        ++classes_with_gt;
      }
      all_gt += gt;
      if (merged) merged->insert(merged->end(), flags.begin(), flags.end());
    }
    if (gt_total) *gt_total = all_gt;
    return classes_with_gt ? sum / static_cast<double>(classes_with_gt) : 0.0;
  };

  APReport report;
  report.ap50 = run(Stratum::kAll, cfg.iou_threshold, nullptr, nullptr);
  for (Stratum s : kStrata) {
    auto& res = report.strata[static_cast<std::size_t>(s)];
    std::vector<Ranked> merged;
    res.ap50 = run(s, 0.5, &merged, &res.gt_count);
    double acc = 0;
    for (int k = 0; k < 10; ++k) acc += run(s, (50 + 5 * k) / 100.0, nullptr, nullptr);
    res.ap = acc / 10.0;
    std::stable_sort(merged.begin(), merged.end(), [](const Ranked& a, const Ranked& b) {
      return a.score != b.score ? a.score > b.score : a.order < b.order;
    });
    Index tp = 0, fp = 0;
    for (const auto& r : merged) {
      if (r.flag == MatchFlag::kIgnored) continue;
      (r.flag == MatchFlag::kTruePositive ? tp : fp) += 1;
      res.curve.push_back({res.gt_count ? static_cast<double>(tp) / static_cast<double>(res.gt_count) : 0.0,
                           static_cast<double>(tp) / static_cast<double>(tp + fp)});
    }
  }
  return report;
}

std::string report_text(const APReport& r) {
  std::ostringstream ss;
  ss.precision(10);
  ss << "schema=apreport/1\n";
  ss << "ap50=" << r.ap50 << "\n";
  ss << "ap_small=" << r.ap_small() << "\nap_medium=" << r.ap_medium() << "\nap_large=" << r.ap_large() << "\n";
  for (Stratum s : kStrata) {
    const auto& res = r.at(s);
    ss << "ap50_" << stratum_name(s) << "=" << res.ap50 << "\n";
    ss << "ap_" << stratum_name(s) << "_50_95=" << res.ap << "\n";
    ss << "gt_" << stratum_name(s) << "=" << res.gt_count << "\n";
  }
  return ss.str();
}

std::string pr_curve_csv(const APReport& r) {
  std::ostringstream ss;
  ss.precision(10);
  ss << "# schema=prcurve/1\nstratum,recall,precision\n";
  for (Stratum s : kStrata)
    for (const auto& p : r.at(s).curve) ss << stratum_name(s) << ',' << p.recall << ',' << p.precision << '\n';
  return ss.str();
}

}  // namespace spseg
