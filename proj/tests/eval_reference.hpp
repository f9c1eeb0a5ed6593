#pragma once

// Deliberately naive mask-AP reference: full-image IoU loops, per-threshold
// re-matching from scratch and an O(n^2) precision envelope. Shares nothing
// with the library evaluator beyond the input types.

#include "spseg/datagen.hpp"
#include "spseg/evaluator.hpp"
#include "spseg/rng.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <vector>

namespace spseg::test {

struct ReferenceReport {
  double ap50 = 0;
  std::array<double, 4> stratum_ap50{};
  std::array<double, 4> stratum_ap{};
  std::array<Index, 4> gt_count{};
};

inline double naive_iou(const BinaryMask& a, const BinaryMask& b) {
  Index both = 0, either = 0;
  for (Index y = 0; y < a.rows(); ++y)
    for (Index x = 0; x < a.cols(); ++x) {
      both += (a(y, x) != 0) && (b(y, x) != 0);
      either += (a(y, x) != 0) || (b(y, x) != 0);
    }
  return either ? static_cast<double>(both) / static_cast<double>(either) : 0.0;
}

inline Index naive_area(const BinaryMask& m) {
  Index n = 0;
  for (Index y = 0; y < m.rows(); ++y)
    for (Index x = 0; x < m.cols(); ++x) n += m(y, x) != 0;
  return n;
}

// bucket 0 = everything, 1 = area < 200, 2 = 200..450, 3 = > 450
inline bool naive_in_bucket(int bucket, Index area) {
  switch (bucket) {
    case 1: return area < 200;
    case 2: return area >= 200 && area <= 450;
    case 3: return area > 450;
    default: return true;
  }
}

// 0 = true positive, 1 = false positive, 2 = not counted
inline double naive_class_ap(const std::vector<Prediction>& preds, const std::vector<const AnnotatedTile*>& tiles,
                             Index cls, int bucket, double thr, Index* gt_out) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i].class_id == cls) order.push_back(i);
  // insertion sort: descending score, equal scores keep input order
  for (std::size_t i = 1; i < order.size(); ++i)
    for (std::size_t j = i; j > 0 && preds[order[j]].score > preds[order[j - 1]].score; --j)
      std::swap(order[j], order[j - 1]);

  Index total_gt = 0;
  std::map<std::string, std::vector<char>> taken;
  for (const auto* t : tiles) {
    taken[t->tile_id].assign(t->instances.size(), 0);
    for (const auto& inst : t->instances)
      if (inst.class_id == cls && naive_in_bucket(bucket, naive_area(inst.mask))) ++total_gt;
  }
  if (gt_out) *gt_out = total_gt;

  std::vector<int> outcome;
  for (std::size_t idx : order) {
    const auto& p = preds[idx];
    const AnnotatedTile* tile = nullptr;
    for (const auto* t : tiles)
      if (t->tile_id == p.tile_id) tile = t;
    auto& used = taken[p.tile_id];
    // first choice: best regular ground truth; fallback: best out-of-bucket one
    int pick = -1, pick_ignored = -1;
    double pick_iou = -1, pick_ignored_iou = -1;
    for (std::size_t g = 0; g < tile->instances.size(); ++g) {
      const auto& inst = tile->instances[g];
      if (inst.class_id != cls || used[g]) continue;
      const double v = naive_iou(p.mask, inst.mask);
      if (v < thr) continue;
      if (naive_in_bucket(bucket, naive_area(inst.mask))) {
        if (v > pick_iou) pick = static_cast<int>(g), pick_iou = v;
      } else if (v > pick_ignored_iou) {
        pick_ignored = static_cast<int>(g), pick_ignored_iou = v;
      }
    }
    if (pick >= 0) {
      used[static_cast<std::size_t>(pick)] = 1;
      outcome.push_back(0);
    } else if (pick_ignored >= 0) {
      used[static_cast<std::size_t>(pick_ignored)] = 1;
      outcome.push_back(2);
    } else {
      outcome.push_back(naive_in_bucket(bucket, naive_area(p.mask)) ? 1 : 2);
    }
  }

  if (total_gt == 0) return 0.0;
  std::vector<double> precision, tp_flag;
  double tp = 0, seen = 0;
  for (int o : outcome) {
    if (o == 2) continue;
    seen += 1;
    if (o == 0) tp += 1;
    precision.push_back(tp / seen);
    tp_flag.push_back(o == 0);
  }
  double ap = 0;
  for (std::size_t k = 0; k < precision.size(); ++k) {
    if (!tp_flag[k]) continue;
    double best = 0;
    for (std::size_t j = k; j < precision.size(); ++j) best = std::max(best, precision[j]);
    ap += best;
  }
  return ap / static_cast<double>(total_gt);
}

inline double naive_ap(const std::vector<Prediction>& preds, const std::vector<const AnnotatedTile*>& tiles,
                       Index num_classes, int bucket, double thr, Index* gt_out = nullptr) {
  double sum = 0;
  int with_gt = 0;
  Index gt_all = 0;
  for (Index c = 0; c < num_classes; ++c) {
    Index gt = 0;
    const double ap = naive_class_ap(preds, tiles, c, bucket, thr, &gt);
    gt_all += gt;
    if (gt > 0) {
      sum += ap;
      ++with_gt;
    }
  }
  if (gt_out) *gt_out = gt_all;
  return with_gt ? sum / with_gt : 0.0;
}

inline ReferenceReport naive_evaluate(const std::vector<Prediction>& preds,
                                      const std::vector<const AnnotatedTile*>& tiles, Index num_classes,
                                      double iou_threshold = 0.5) {
  ReferenceReport r;
  r.ap50 = naive_ap(preds, tiles, num_classes, 0, iou_threshold);
  for (int b = 0; b < 4; ++b) {
    r.stratum_ap50[static_cast<std::size_t>(b)] =
        naive_ap(preds, tiles, num_classes, b, 0.5, &r.gt_count[static_cast<std::size_t>(b)]);
    double acc = 0;
    for (int k = 0; k < 10; ++k) acc += naive_ap(preds, tiles, num_classes, b, (50 + 5 * k) / 100.0);
    r.stratum_ap[static_cast<std::size_t>(b)] = acc / 10.0;
  }
  return r;
}

// Five tiles of ground truth plus predictions where about half are corrupted:
// shifted copies, eroded or dilated copies, random rectangles, duplicates and
// wrong classes, with coarse scores so that ties occur.
struct EvalScenario {
  std::vector<AnnotatedTile> tiles;
  std::vector<Prediction> predictions;
  Index num_classes = 1;

  std::vector<const AnnotatedTile*> pointers() const {
    std::vector<const AnnotatedTile*> out;
    for (const auto& t : tiles) out.push_back(&t);
    return out;
  }
};

inline BinaryMask shifted(const BinaryMask& m, Index dy, Index dx) {
  BinaryMask out = BinaryMask::Zero(m.rows(), m.cols());
  for (Index y = 0; y < m.rows(); ++y)
    for (Index x = 0; x < m.cols(); ++x) {
      const Index sy = y - dy, sx = x - dx;
      if (sy >= 0 && sy < m.rows() && sx >= 0 && sx < m.cols()) out(y, x) = m(sy, sx);
    }
  return out;
}

inline BinaryMask morph(const BinaryMask& m, bool grow) {
  BinaryMask out = m;
  for (Index y = 0; y < m.rows(); ++y)
    for (Index x = 0; x < m.cols(); ++x) {
      bool any = false, all = true;
      for (Index dy = -1; dy <= 1; ++dy)
        for (Index dx = -1; dx <= 1; ++dx) {
          const Index yy = y + dy, xx = x + dx;
          const bool v = yy >= 0 && yy < m.rows() && xx >= 0 && xx < m.cols() && m(yy, xx);
          any = any || v;
          all = all && v;
        }
      out(y, x) = grow ? any : all;
    }
  return out;
}

inline EvalScenario make_scenario(std::uint64_t seed, Index num_classes = 1) {
  Rng rng(seed);
  EvalScenario s;
  s.num_classes = num_classes;
  for (int t = 0; t < 5; ++t) {
    SceneConfig sc;
    sc.tile_extent = 96;
    sc.min_polygons = 6;
    sc.max_polygons = 40;
    sc.num_classes = num_classes;
    sc.seed = derive_seed(seed, static_cast<std::uint64_t>(t));
    s.tiles.push_back(generate_scene(sc, "tile_" + std::to_string(t)));
  }
  auto score = [&] { return static_cast<double>(rng.uniform_int(0, 20)) / 20.0; };
  for (const auto& tile : s.tiles) {
    for (const auto& inst : tile.instances) {
      Prediction p{tile.tile_id, score(), inst.class_id, inst.mask};
      switch (rng.uniform_int(0, 7)) {
        case 0: p.mask = shifted(inst.mask, rng.uniform_int(-4, 4), rng.uniform_int(-4, 4)); break;
        case 1: p.mask = morph(inst.mask, rng.uniform() < 0.5); break;
        case 2: p.class_id = rng.uniform_int(0, num_classes - 1); break;
        case 3: s.predictions.push_back(p); p.score = score(); break;  // duplicate
        case 4: continue;                                               // missed
        default: break;                                                 // exact copy
      }
      s.predictions.push_back(p);
    }
    const Index extras = rng.uniform_int(0, 6);
    for (Index k = 0; k < extras; ++k) {
      const Extent2 e = tile.extent();
      BinaryMask m = BinaryMask::Zero(e.height, e.width);
      const Index h = rng.uniform_int(3, 30), w = rng.uniform_int(3, 30);
      m.block(rng.uniform_int(0, e.height - h), rng.uniform_int(0, e.width - w), h, w).setOnes();
      s.predictions.push_back({tile.tile_id, score(), rng.uniform_int(0, num_classes - 1), m});
    }
  }
  rng.shuffle(s.predictions.begin(), s.predictions.end());
  return s;
}

}  // namespace spseg::test
