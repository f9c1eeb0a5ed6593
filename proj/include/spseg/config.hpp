#pragma once

// JSON run configuration shared by the command-line tool. Every section and
// field is optional; unknown keys are rejected.

#include "spseg/bench.hpp"
#include "spseg/datagen.hpp"
#include "spseg/model.hpp"
#include "spseg/train.hpp"

#include <filesystem>
#include <string>

namespace spseg {

struct RunConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t init_seed = 0;
  double iou_threshold = 0.5;
  double score_threshold = 0.3;
  Index warmup = 3;
  Index reps = 20;
  std::vector<Index> sweep_n{100, 300, 500};

  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

std::string model_config_json(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& json_text);

}  // namespace spseg
