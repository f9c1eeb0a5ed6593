// sparseseg: dataset generation, training, evaluation, benchmarking, the
// N sweep and raster prediction from the command line.

#include "spseg/bench.hpp"
#include "spseg/checkpoint.hpp"
#include "spseg/config.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace spseg;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<Index> n_instances;
  std::optional<double> iou_threshold;
  std::optional<double> score_threshold;
  std::optional<Index> warmup;
  std::optional<Index> reps;
  std::string out;

  std::string dataset;
  std::string checkpoint;
  std::string input;
  std::string split = "test";
  std::optional<Index> tiles;
  std::optional<Index> iterations;
  std::vector<Index> n_list;
  Index tile = 256;
  Index overlap = 32;
  bool resume = false;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

RunConfig run_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) {
    cfg.dataset.master_seed = *o.seed;
    cfg.train.seed = *o.seed;
    cfg.init_seed = *o.seed;
  }
  if (o.n_instances) cfg.model.decoder.n_instances = *o.n_instances;
  if (o.iou_threshold) cfg.iou_threshold = *o.iou_threshold;
  if (o.score_threshold) cfg.score_threshold = *o.score_threshold;
  if (o.warmup) cfg.warmup = *o.warmup;
  if (o.reps) cfg.reps = *o.reps;
  if (o.tiles) cfg.dataset.tiles = *o.tiles;
  if (o.iterations) cfg.train.max_iterations = *o.iterations;
  if (!o.n_list.empty()) cfg.sweep_n = o.n_list;
  cfg.validate();
  return cfg;
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(o.out);
  return o.out;
}

Dataset require_dataset(const Options& o) {
  if (o.dataset.empty()) throw ConfigError("--dataset is required");
  return read_dataset(o.dataset);
}

const std::vector<std::string>& split_ids(const Dataset& ds, const std::string& name) {
  if (name == "train") return ds.split.train;
  if (name == "val") return ds.split.val;
  if (name == "test") return ds.split.test;
  throw ConfigError("unknown split '" + name + "' (train, val or test)");
}

struct LoadedModel {
  ModelConfig cfg;
  ParamSet<float> params;
};

LoadedModel load_model(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const fs::path dir = fs::is_directory(o.checkpoint) ? fs::path(o.checkpoint) : fs::path(o.checkpoint).parent_path();
  const fs::path file = fs::is_directory(o.checkpoint) ? dir / "model.ckpt" : fs::path(o.checkpoint);
  LoadedModel m{parse_model_config(slurp(dir / "model.json")), {}};
  m.params = init_model_params<float>(m.cfg, 0);
  load_checkpoint(file, m.params);
  return m;
}

int cmd_generate(const Options& o) {
  const RunConfig cfg = run_config(o);
  const fs::path out = require_out(o);
  Dataset ds;
  ds.tiles = generate_dataset(cfg.dataset);
  ds.master_seed = cfg.dataset.master_seed;
  ds.config_hash = config_hash(cfg.dataset.scene);
  std::vector<std::string> ids;
  for (const auto& t : ds.tiles) ids.push_back(t.tile_id);
  ds.split = split_dataset(ids, cfg.dataset.master_seed);
  write_dataset(out, ds);
  std::size_t instances = 0;
  for (const auto& t : ds.tiles) instances += t.instances.size();
  std::cout << "tiles=" << ds.tiles.size() << "\ninstances=" << instances << "\ntrain=" << ds.split.train.size()
            << "\nval=" << ds.split.val.size() << "\ntest=" << ds.split.test.size() << "\nmanifest="
            << (out / "manifest.iwp").string() << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig cfg = run_config(o);
  const Dataset ds = require_dataset(o);
  const fs::path out = require_out(o);
  const auto tiles = ds.subset(ds.split.train);
  auto params = init_model_params<float>(cfg.model, cfg.init_seed);
  write_file(out / "model.json", model_config_json(cfg.model));
  const TrainOutputs outputs{out};
  auto report = [](const LossRecord& r) {
    if (r.iteration % 10 == 0) std::cerr << "iteration " << r.iteration << " loss " << r.total << "\n";
  };
  std::vector<LossRecord> curve;
  try {
    curve = o.resume ? resume(tiles, cfg.model, params, cfg.train, outputs, report)
                     : fit(tiles, cfg.model, params, cfg.train, outputs, 0, report);
  } catch (const DivergenceError& e) {
    std::cerr << "sparseseg: " << e.what() << "; last good checkpoint kept in " << out.string() << "\n";
    return 3;
  }
  std::cout << "iterations=" << (curve.empty() ? 0 : curve.back().iteration) << "\nfinal_loss="
            << (curve.empty() ? 0.0 : curve.back().total) << "\ncheckpoint=" << outputs.checkpoint().string() << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const RunConfig cfg = run_config(o);
  const Dataset ds = require_dataset(o);
  auto model = load_model(o);
  const auto tiles = ds.subset(split_ids(ds, o.split));
  const auto preds = predict_tiles(tiles, model.cfg, model.params, cfg.score_threshold);
  const auto report = evaluate(preds, tiles, {cfg.iou_threshold, model.cfg.decoder.num_classes});
  const std::string text = report_text(report);
  std::cout << text;
  if (!o.out.empty()) {
    const fs::path out = require_out(o);
    write_file(out / "report.txt", text);
    write_file(out / "pr_curve.csv", pr_curve_csv(report));
    std::string lines;
    for (const auto& p : preds)
      lines += nlohmann::json{{"tile", p.tile_id},         {"score", p.score},         {"class", p.class_id},
                              {"height", p.mask.rows()},   {"width", p.mask.cols()},   {"rle", rle_encode(p.mask)}}
                   .dump() +
               "\n";
    write_file(out / "predictions.jsonl", lines);
  }
  return 0;
}

int cmd_bench(const Options& o) {
  const RunConfig cfg = run_config(o);
  const Dataset ds = require_dataset(o);
  auto model = load_model(o);
  std::vector<Image> images;
  for (const auto* t : ds.subset(split_ids(ds, o.split))) images.push_back(t->image);
  const auto r = measure_model_fps(model.cfg, model.params, images, cfg.warmup, cfg.reps, cfg.score_threshold);
  const std::string text = fps_report_text(r);
  std::cout << text;
  if (!o.out.empty()) write_file(require_out(o) / "fps.txt", text);
  return 0;
}

int cmd_sweep(const Options& o) {
  const RunConfig cfg = run_config(o);
  const Dataset ds = require_dataset(o);
  SweepConfig sweep;
  sweep.n_values = cfg.sweep_n;
  sweep.model = cfg.model;
  sweep.train = cfg.train;
  sweep.init_seed = cfg.init_seed;
  sweep.warmup = cfg.warmup;
  sweep.reps = cfg.reps;
  sweep.out_dir = require_out(o);
  const auto records = run_sweep(ds.subset(ds.split.train), ds.subset(split_ids(ds, o.split)), sweep,
                                 [](const std::string& w) { std::cerr << "warning: " << w << "\n"; });
  std::cout << tradeoff_csv(records);
  return 0;
}

int cmd_predict(const Options& o) {
  const RunConfig cfg = run_config(o);
  if (o.input.empty()) throw ConfigError("--input is required");
  auto model = load_model(o);
  const Image raster = read_ppm(o.input);
  const auto result = predict_raster(raster, model.cfg, model.params, o.tile, o.overlap, cfg.score_threshold);
  const fs::path out = require_out(o);
  write_ppm(out / "overlay.ppm", result.overlay);
  write_file(out / "predictions.jsonl", prediction_records(result));
  std::cout << "instances=" << result.instances.size() << "\noverlay=" << (out / "overlay.ppm").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse instance segmentation of synthetic polygonal terrain"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Seed for data, initialization and batch order");
    sub->add_option("--n-instances", o.n_instances, "Decoder prediction slots N");
    sub->add_option("--iou-threshold", o.iou_threshold, "IoU threshold of the headline AP");
    sub->add_option("--score-threshold", o.score_threshold, "Minimum score of a kept instance");
    sub->add_option("--warmup", o.warmup, "Untimed warm-up passes");
    sub->add_option("--reps", o.reps, "Timed passes");
    sub->add_option("--out", o.out, "Output directory");
  };

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  common(gen);
  gen->add_option("--tiles", o.tiles, "Number of tiles (867 for the full-size set)");

  auto* train = app.add_subcommand("train", "Train on the train split");
  common(train);
  train->add_option("--dataset", o.dataset, "Dataset directory")->required();
  train->add_option("--iterations", o.iterations, "Total number of updates");
  train->add_flag("--resume", o.resume, "Continue from the checkpoint in --out");

  auto* eval = app.add_subcommand("eval", "Mask AP of a checkpoint");
  common(eval);
  eval->add_option("--dataset", o.dataset, "Dataset directory")->required();
  eval->add_option("--checkpoint", o.checkpoint, "Training output directory or .ckpt file")->required();
  eval->add_option("--split", o.split, "train, val or test");

  auto* bench = app.add_subcommand("bench", "Single-stream FPS of a checkpoint");
  common(bench);
  bench->add_option("--dataset", o.dataset, "Dataset directory")->required();
  bench->add_option("--checkpoint", o.checkpoint, "Training output directory or .ckpt file")->required();
  bench->add_option("--split", o.split, "train, val or test");

  auto* sweep = app.add_subcommand("sweep", "Speed/accuracy trade-off over N");
  common(sweep);
  sweep->add_option("--dataset", o.dataset, "Dataset directory")->required();
  sweep->add_option("--n-list", o.n_list, "Values of N")->delimiter(',');
  sweep->add_option("--iterations", o.iterations, "Training updates per N");
  sweep->add_option("--split", o.split, "Evaluation split");

  auto* predict = app.add_subcommand("predict", "Segment a raster and render an overlay");
  common(predict);
  predict->add_option("--checkpoint", o.checkpoint, "Training output directory or .ckpt file")->required();
  predict->add_option("--input", o.input, "Binary PPM raster")->required();
  predict->add_option("--tile", o.tile, "Tile extent");
  predict->add_option("--overlap", o.overlap, "Tile overlap");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_generate(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*bench) return cmd_bench(o);
    if (*sweep) return cmd_sweep(o);
    if (*predict) return cmd_predict(o);
  } catch (const std::exception& e) {
    std::cerr << "sparseseg: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
