#pragma once

#include "spseg/evaluator.hpp"
#include "spseg/model.hpp"
#include "spseg/train.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace spseg {

/// Frames per second at or above which a report is labelled real-time.
inline constexpr double kRealTimeFps = 30.0;

struct FpsResult {
  Index images_processed = 0;
  double wall_seconds = 0;
  double fps = 0;
  double p50_ms = 0, p90_ms = 0, p99_ms = 0;
  Index warmup_count = 0;

  bool real_time() const { return fps >= kRealTimeFps; }
};

/// Single-stream timing of `run` over `images`, cycling through them.
/// `warmup` untimed calls precede `reps` timed calls; only the calls
/// themselves are timed, on the monotonic clock.
FpsResult measure_fps(const std::function<void(const Image&)>& run, const std::vector<Image>& images, Index warmup,
                      Index reps);

/// Times infer() (forward pass plus thresholding).
FpsResult measure_model_fps(const ModelConfig& cfg, ParamSet<float>& params, const std::vector<Image>& images,
                            Index warmup, Index reps, double score_threshold);

std::string fps_report_text(const FpsResult& r);

/// Runs infer() on every tile and returns evaluator records.
std::vector<Prediction> predict_tiles(const std::vector<const AnnotatedTile*>& tiles, const ModelConfig& cfg,
                                      ParamSet<float>& params, double score_threshold);

struct TradeoffRecord {
  Index n_instances = 0;
  double fps = 0;
  double ap50 = 0;
};

inline constexpr const char* kTradeoffSchema = "# schema=tradeoff/1";

std::string tradeoff_csv(const std::vector<TradeoffRecord>& records);
std::vector<TradeoffRecord> parse_tradeoff_csv(const std::string& text);
/// FPS against N as an SVG line plot; every record is a <circle> carrying
/// data-n, data-fps and data-ap50 attributes.
std::string tradeoff_svg(const std::vector<TradeoffRecord>& records);

struct SweepConfig {
  std::vector<Index> n_values{100, 300, 500};
  ModelConfig model;
  TrainConfig train;
  std::uint64_t init_seed = 0;
  Index warmup = 3;
  Index reps = 20;
  double score_threshold = 0.05;  // for AP
  std::filesystem::path out_dir;  // CSV, SVG and per-N checkpoints; empty: nothing written
};

/// One model per N trained from the same seed on the same data order,
/// evaluated on `eval_tiles` (AP50) and timed on their images. Records come
/// back sorted by N; after each leg the CSV/SVG are rewritten, so a failure
/// leaves the finished legs on disk. Warnings (e.g. N below the largest
/// ground-truth count) go to `warn`.
std::vector<TradeoffRecord> run_sweep(const std::vector<const AnnotatedTile*>& train_tiles,
                                      const std::vector<const AnnotatedTile*>& eval_tiles, const SweepConfig& cfg,
                                      const std::function<void(const std::string&)>& warn = {});

struct RasterInstance {
  Index tile = 0;
  Index row = 0, col = 0;  // tile origin in the raster
  double score = 0;
  Index class_id = 0;
  BinaryMask mask;  // tile-local, cropped to the part inside the raster
};

struct RasterPrediction {
  std::vector<RasterInstance> instances;
  /// Winning instance per raster pixel (-1: none), by highest score.
  Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> owner;
  Image overlay;  // input blended with one distinct colour per instance
};

RasterPrediction predict_raster(const Image& raster, const ModelConfig& cfg, ParamSet<float>& params, Index tile,
                                Index overlap, double score_threshold);

/// Distinct colour for instance k (golden-ratio hue walk).
std::array<float, 3> instance_colour(Index k);

/// One JSON object per line: tile, row, col, score, class, height, width, rle.
std::string prediction_records(const RasterPrediction& p);

}  // namespace spseg
