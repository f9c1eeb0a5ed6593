#include "spseg/config.hpp"

#include "json.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

namespace spseg {
namespace {

using nlohmann::json;

void allow_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void read_scene(const json& j, SceneConfig& s) {
  allow_keys(j, "scene",
             {"tile_extent", "min_polygons", "max_polygons", "low_centered_fraction", "trough_width",
              "noise_amplitude", "num_classes"});
  read(j, "tile_extent", s.tile_extent, "scene");
  read(j, "min_polygons", s.min_polygons, "scene");
  read(j, "max_polygons", s.max_polygons, "scene");
  read(j, "low_centered_fraction", s.low_centered_fraction, "scene");
  read(j, "trough_width", s.trough_width, "scene");
  read(j, "noise_amplitude", s.noise_amplitude, "scene");
  read(j, "num_classes", s.num_classes, "scene");
}

void read_model(const json& j, ModelConfig& m) {
  allow_keys(j, "model", {"backbone", "encoder", "decoder"});
  if (j.contains("backbone")) {
    const auto& b = j["backbone"];
    allow_keys(b, "model.backbone", {"stem_channels", "stage_channels", "blocks_per_stage", "norm_groups"});
    read(b, "stem_channels", m.backbone.stem_channels, "model.backbone");
    read(b, "stage_channels", m.backbone.stage_channels, "model.backbone");
    read(b, "blocks_per_stage", m.backbone.blocks_per_stage, "model.backbone");
    read(b, "norm_groups", m.backbone.norm_groups, "model.backbone");
  }
  if (j.contains("encoder")) {
    const auto& e = j["encoder"];
    allow_keys(e, "model.encoder", {"fused_channels", "ppm_bins", "pool_before_lateral", "norm_groups"});
    read(e, "fused_channels", m.encoder.fused_channels, "model.encoder");
    read(e, "ppm_bins", m.encoder.ppm_bins, "model.encoder");
    read(e, "pool_before_lateral", m.encoder.pool_before_lateral, "model.encoder");
    read(e, "norm_groups", m.encoder.norm_groups, "model.encoder");
  }
  if (j.contains("decoder")) {
    const auto& d = j["decoder"];
    allow_keys(d, "model.decoder", {"n_instances", "kernel_dim", "num_classes", "mask_branch_channels"});
    read(d, "n_instances", m.decoder.n_instances, "model.decoder");
    read(d, "kernel_dim", m.decoder.kernel_dim, "model.decoder");
    read(d, "num_classes", m.decoder.num_classes, "model.decoder");
    read(d, "mask_branch_channels", m.decoder.mask_branch_channels, "model.decoder");
  }
}

void read_train(const json& j, TrainConfig& t) {
  allow_keys(j, "train",
             {"batch_size", "max_iterations", "lr", "momentum", "clip_norm", "seed", "checkpoint_every", "weights",
              "cost"});
  read(j, "batch_size", t.batch_size, "train");
  read(j, "max_iterations", t.max_iterations, "train");
  read(j, "lr", t.lr, "train");
  read(j, "momentum", t.momentum, "train");
  read(j, "clip_norm", t.clip_norm, "train");
  read(j, "seed", t.seed, "train");
  read(j, "checkpoint_every", t.checkpoint_every, "train");
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    allow_keys(w, "train.weights", {"cls", "dice", "bce", "obj"});
    read(w, "cls", t.weights.cls, "train.weights");
    read(w, "dice", t.weights.dice, "train.weights");
    read(w, "bce", t.weights.bce, "train.weights");
    read(w, "obj", t.weights.obj, "train.weights");
  }
  if (j.contains("cost")) {
    const auto& c = j["cost"];
    allow_keys(c, "train.cost", {"alpha", "beta"});
    read(c, "alpha", t.cost.alpha, "train.cost");
    read(c, "beta", t.cost.beta, "train.cost");
  }
}

json model_json(const ModelConfig& m) {
  return {{"backbone",
           {{"stem_channels", m.backbone.stem_channels},
            {"stage_channels", m.backbone.stage_channels},
            {"blocks_per_stage", m.backbone.blocks_per_stage},
            {"norm_groups", m.backbone.norm_groups}}},
          {"encoder",
           {{"fused_channels", m.encoder.fused_channels},
            {"ppm_bins", m.encoder.ppm_bins},
            {"pool_before_lateral", m.encoder.pool_before_lateral},
            {"norm_groups", m.encoder.norm_groups}}},
          {"decoder",
           {{"n_instances", m.decoder.n_instances},
            {"kernel_dim", m.decoder.kernel_dim},
            {"num_classes", m.decoder.num_classes},
            {"mask_branch_channels", m.decoder.mask_branch_channels}}}};
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  dataset.scene.validate();
  if (dataset.tiles < 1) throw ConfigError("dataset.tiles must be positive");
  model.validate();
  train.validate();
  if (!(iou_threshold > 0 && iou_threshold <= 1)) throw ConfigError("iou_threshold must lie in (0, 1]");
  if (!(score_threshold >= 0 && score_threshold <= 1)) throw ConfigError("score_threshold must lie in [0, 1]");
  if (warmup < 1 || reps < 1) throw ConfigError("warmup and reps must be at least 1");
  if (sweep_n.empty()) throw ConfigError("sweep_n must not be empty");
  if (dataset.scene.num_classes != model.decoder.num_classes)
    throw ConfigError("scene.num_classes and model.decoder.num_classes disagree");
}

RunConfig parse_run_config(const std::string& text) {
  const json j = parse_json(text);
  allow_keys(j, "config",
             {"scene", "dataset", "model", "train", "init_seed", "iou_threshold", "score_threshold", "warmup", "reps",
              "sweep_n"});
  RunConfig cfg;
  if (j.contains("scene")) read_scene(j["scene"], cfg.dataset.scene);
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    allow_keys(d, "dataset", {"tiles", "master_seed", "threads"});
    read(d, "tiles", cfg.dataset.tiles, "dataset");
    read(d, "master_seed", cfg.dataset.master_seed, "dataset");
    read(d, "threads", cfg.dataset.threads, "dataset");
  }
  if (j.contains("model")) read_model(j["model"], cfg.model);
  if (j.contains("train")) read_train(j["train"], cfg.train);
  read(j, "init_seed", cfg.init_seed, "config");
  read(j, "iou_threshold", cfg.iou_threshold, "config");
  read(j, "score_threshold", cfg.score_threshold, "config");
  read(j, "warmup", cfg.warmup, "config");
  read(j, "reps", cfg.reps, "config");
  read(j, "sweep_n", cfg.sweep_n, "config");
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string model_config_json(const ModelConfig& cfg) { return model_json(cfg).dump(2) + "\n"; }

ModelConfig parse_model_config(const std::string& text) {
  ModelConfig m;
  read_model(parse_json(text), m);
  m.validate();
  return m;
}

}  // namespace spseg
