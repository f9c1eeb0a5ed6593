#include "spseg/bench.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace spseg {
namespace {

double percentile(std::vector<double> sorted, double q) {
  if (sorted.empty()) return 0;
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  return sorted[std::min(sorted.size() - 1, rank == 0 ? 0 : rank - 1)];
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

FpsResult measure_fps(const std::function<void(const Image&)>& run, const std::vector<Image>& images, Index warmup,
                      Index reps) {
  if (images.empty()) throw ConfigError("measure_fps: image set is empty");
  if (warmup < 1 || reps < 1) throw ConfigError("measure_fps: warmup and reps must be at least 1");
  const auto count = images.size();
  for (Index i = 0; i < warmup; ++i) run(images[static_cast<std::size_t>(i) % count]);
  std::vector<double> latency;
  latency.reserve(static_cast<std::size_t>(reps));
  double total = 0;
  for (Index i = 0; i < reps; ++i) {
    const Image& img = images[static_cast<std::size_t>(i) % count];
    const auto t0 = std::chrono::steady_clock::now();
    run(img);
    const auto t1 = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(t1 - t0).count();
    total += s;
    latency.push_back(s * 1e3);
  }
  std::sort(latency.begin(), latency.end());
  FpsResult r;
  r.images_processed = reps;
  r.wall_seconds = total;
  r.fps = static_cast<double>(reps) / total;
  r.p50_ms = percentile(latency, 0.50);
  r.p90_ms = percentile(latency, 0.90);
  r.p99_ms = percentile(latency, 0.99);
  r.warmup_count = warmup;
  return r;
}

FpsResult measure_model_fps(const ModelConfig& cfg, ParamSet<float>& params, const std::vector<Image>& images,
                            Index warmup, Index reps, double score_threshold) {
  std::size_t sink = 0;
  auto r = measure_fps([&](const Image& img) { sink += infer(img, cfg, params, score_threshold).size(); }, images,
                       warmup, reps);
  (void)sink;
  return r;
}

std::string fps_report_text(const FpsResult& r) {
  std::ostringstream ss;
  ss.precision(8);
  ss << "schema=fps/1\nimages_processed=" << r.images_processed << "\nwall_seconds=" << r.wall_seconds
     << "\nfps=" << r.fps << "\nlatency_p50_ms=" << r.p50_ms << "\nlatency_p90_ms=" << r.p90_ms
     << "\nlatency_p99_ms=" << r.p99_ms << "\nwarmup_count=" << r.warmup_count
     << "\nreal_time=" << (r.real_time() ? "yes" : "no") << "\n";
  return ss.str();
}

std::vector<Prediction> predict_tiles(const std::vector<const AnnotatedTile*>& tiles, const ModelConfig& cfg,
                                      ParamSet<float>& params, double score_threshold) {
  std::vector<Prediction> out;
  for (const auto* t : tiles)
    for (auto& m : infer(t->image, cfg, params, score_threshold))
      out.push_back({t->tile_id, m.score, m.class_id, std::move(m.mask)});
  return out;
}

std::string tradeoff_csv(const std::vector<TradeoffRecord>& records) {
  std::ostringstream ss;
  ss.precision(10);
  ss << kTradeoffSchema << "\nn_instances,fps,ap50\n";
  for (const auto& r : records) ss << r.n_instances << ',' << r.fps << ',' << r.ap50 << '\n';
  return ss.str();
}

std::vector<TradeoffRecord> parse_tradeoff_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTradeoffSchema) throw std::runtime_error("tradeoff csv: missing schema line");
  if (!std::getline(in, line) || line != "n_instances,fps,ap50")
    throw std::runtime_error("tradeoff csv: missing header row");
  std::vector<TradeoffRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TradeoffRecord r;
    char c1, c2;
    std::istringstream ss(line);
    if (!(ss >> r.n_instances >> c1 >> r.fps >> c2 >> r.ap50) || c1 != ',' || c2 != ',')
      throw std::runtime_error("tradeoff csv: malformed row '" + line + "'");
    out.push_back(r);
  }
  return out;
}

std::string tradeoff_svg(const std::vector<TradeoffRecord>& records) {
  const double W = 480, H = 320, L = 60, R = 20, T = 20, B = 50;
  double nmin = 0, nmax = 1, fmax = 1;
  if (!records.empty()) {
    nmin = nmax = static_cast<double>(records.front().n_instances);
    for (const auto& r : records) {
      nmin = std::min(nmin, static_cast<double>(r.n_instances));
      nmax = std::max(nmax, static_cast<double>(r.n_instances));
      fmax = std::max(fmax, r.fps);
    }
  }
  if (nmax == nmin) nmax = nmin + 1;
  auto px = [&](double n) { return L + (n - nmin) / (nmax - nmin) * (W - L - R); };
  auto py = [&](double f) { return H - B - f / (fmax * 1.1) * (H - T - B); };
  std::ostringstream ss;
  ss.precision(6);
  ss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  ss << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  ss << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  ss << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  ss << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">N (max detections)</text>\n";
  ss << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 " << (T + H - B) / 2
     << ")\" text-anchor=\"middle\">FPS</text>\n";
  if (!records.empty()) {
    ss << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (const auto& r : records) ss << px(static_cast<double>(r.n_instances)) << ',' << py(r.fps) << ' ';
    ss << "\"/>\n";
  }
  for (const auto& r : records) {
    const double x = px(static_cast<double>(r.n_instances)), y = py(r.fps);
    ss << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"4\" fill=\"steelblue\" data-n=\"" << r.n_instances
       << "\" data-fps=\"" << r.fps << "\" data-ap50=\"" << r.ap50 << "\"/>\n";
    ss << "<text x=\"" << x << "\" y=\"" << y - 8 << "\" text-anchor=\"middle\" font-size=\"11\">N=" << r.n_instances
       << " AP50=" << r.ap50 << "</text>\n";
  }
  ss << "</svg>\n";
  return ss.str();
}

std::vector<TradeoffRecord> run_sweep(const std::vector<const AnnotatedTile*>& train_tiles,
                                      const std::vector<const AnnotatedTile*>& eval_tiles, const SweepConfig& cfg,
                                      const std::function<void(const std::string&)>& warn) {
  if (cfg.n_values.empty()) throw ConfigError("sweep: N list is empty");
  if (eval_tiles.empty()) throw ConfigError("sweep: evaluation set is empty");
  std::vector<Index> ns = cfg.n_values;
  std::sort(ns.begin(), ns.end());
  ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
  std::size_t max_gt = 0;
  for (const auto* group : {&train_tiles, &eval_tiles})
    for (const auto* t : *group) max_gt = std::max(max_gt, t->instances.size());
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  std::vector<Image> images;
  for (const auto* t : eval_tiles) images.push_back(t->image);
  std::vector<TradeoffRecord> records;
  for (Index n : ns) {
    if (n < static_cast<Index>(max_gt) && warn)
      warn("N=" + std::to_string(n) + " is below the largest ground-truth count " + std::to_string(max_gt));
    ModelConfig model = cfg.model;
    model.decoder.n_instances = n;
    auto params = init_model_params<float>(model, cfg.init_seed);
    TrainOutputs outputs;
    if (!cfg.out_dir.empty()) outputs.dir = cfg.out_dir / ("n" + std::to_string(n));
    if (cfg.train.max_iterations > 0) fit(train_tiles, model, params, cfg.train, outputs);
    const auto report = evaluate(predict_tiles(eval_tiles, model, params, cfg.score_threshold), eval_tiles,
                                 {0.5, model.decoder.num_classes});
    const auto fps = measure_model_fps(model, params, images, cfg.warmup, cfg.reps, cfg.score_threshold);
    records.push_back({n, fps.fps, report.ap50});
    if (!cfg.out_dir.empty()) {
      write_text(cfg.out_dir / "tradeoff.csv", tradeoff_csv(records));
      write_text(cfg.out_dir / "tradeoff.svg", tradeoff_svg(records));
    }
  }
  return records;
}

std::array<float, 3> instance_colour(Index k) {
  const double h = std::fmod(0.1 + 0.618033988749895 * static_cast<double>(k), 1.0) * 6.0;
  const double s = 0.75, v = 0.95;
  const int sector = static_cast<int>(h);
  const double f = h - sector, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (sector) {
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    case 5: r = v; g = p; b = q; break;
    default: break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

RasterPrediction predict_raster(const Image& raster, const ModelConfig& cfg, ParamSet<float>& params, Index tile,
                                Index overlap, double score_threshold) {
  const Extent2 e = image_extent(raster);
  const auto tiles = tile_raster(raster, tile, overlap);
  RasterPrediction out;
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    const auto& t = tiles[k];
    for (auto& m : infer(t.image, cfg, params, score_threshold))
      out.instances.push_back({static_cast<Index>(k), t.row, t.col, m.score, m.class_id,
                               m.mask.topLeftCorner(t.valid.height, t.valid.width)});
  }
  out.owner.setConstant(e.height, e.width, -1);
  Eigen::ArrayXXd best = Eigen::ArrayXXd::Constant(e.height, e.width, -1.0);
  for (std::size_t i = 0; i < out.instances.size(); ++i) {
    const auto& inst = out.instances[i];
    for (Index y = 0; y < inst.mask.rows(); ++y)
      for (Index x = 0; x < inst.mask.cols(); ++x)
        if (inst.mask(y, x) && inst.score > best(inst.row + y, inst.col + x)) {
          best(inst.row + y, inst.col + x) = inst.score;
          out.owner(inst.row + y, inst.col + x) = static_cast<std::int32_t>(i);
        }
  }
  out.overlay = raster;
  for (Index y = 0; y < e.height; ++y)
    for (Index x = 0; x < e.width; ++x) {
      const auto k = out.owner(y, x);
      if (k < 0) continue;
      const auto colour = instance_colour(k);
      for (Index c = 0; c < 3; ++c)
        out.overlay(c, y, x) = 0.45f * raster(c, y, x) + 0.55f * colour[static_cast<std::size_t>(c)];
    }
  return out;
}

std::string prediction_records(const RasterPrediction& p) {
  std::string out;
  for (const auto& inst : p.instances) {
    nlohmann::json j = {{"tile", inst.tile},          {"row", inst.row},          {"col", inst.col},
                        {"score", inst.score},        {"class", inst.class_id},   {"height", inst.mask.rows()},
                        {"width", inst.mask.cols()},  {"rle", rle_encode(inst.mask)}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace spseg
