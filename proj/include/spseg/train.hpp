#pragma once

#include "spseg/datagen.hpp"
#include "spseg/matching.hpp"
#include "spseg/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

namespace spseg {

struct TrainConfig {
  Index batch_size = 4;
  Index max_iterations = 2000;
  double lr = 0.01;
  double momentum = 0.9;
  double clip_norm = 1.0;  // 0 disables clipping
  LossWeights weights;
  MatchCostConfig cost;
  std::uint64_t seed = 0;
  Index checkpoint_every = 100;

  void validate() const;
};

struct LossRecord {
  Index iteration = 0;  // 1-based count of completed updates
  double total = 0, cls = 0, dice = 0, bce = 0, obj = 0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(Index iteration, const std::string& what)
      : std::runtime_error(what), iteration_(iteration) {}
  Index iteration() const { return iteration_; }

 private:
  Index iteration_;
};

/// Tiles (indices into the training set) used by update `iteration`
/// (0-based). Every pass over the set is a fresh seeded permutation, so the
/// order can be recomputed from the iteration number alone when resuming.
std::vector<Index> batch_indices(Index num_tiles, Index batch_size, Index iteration, std::uint64_t seed);

/// Where fit() persists state. With an empty directory nothing is written.
struct TrainOutputs {
  std::filesystem::path dir;
  std::filesystem::path checkpoint() const { return dir / "model.ckpt"; }
  std::filesystem::path optimizer() const { return dir / "optim.ckpt"; }
  std::filesystem::path loss_curve() const { return dir / "loss.csv"; }
};

inline constexpr const char* kLossCurveHeader = "iteration,total,cls,dice,bce,obj";

template <typename Scalar>
struct TileLoss {
  LossBreakdown<Scalar> loss;
  Assignment assignment;
};

/// Matching decisions held fixed, e.g. while probing the loss numerically.
template <typename Scalar>
struct FrozenMatch {
  Assignment assignment;
  Tensor<Scalar> objectness_target;
};

/// Forward pass, matching and loss of one tile recorded on `graph`.
/// padded_image: [1,3,H,W].
template <typename Scalar>
TileLoss<Scalar> tile_loss(Graph<Scalar>& graph, const Tensor<Scalar>& padded_image,
                           const InstanceTargets<Scalar>& targets, const ModelConfig& model, ParamSet<Scalar>& params,
                           const TrainConfig& cfg, const FrozenMatch<Scalar>* frozen = nullptr);

/// Trains `params` on `tiles` starting after update `start_iteration`. Writes
/// the loss curve each update and checkpoint + optimizer state every
/// checkpoint_every updates and at the end (files are replaced atomically, so
/// an abort leaves the last good checkpoint). A non-finite loss or parameter
/// raises DivergenceError.
std::vector<LossRecord> fit(const std::vector<const AnnotatedTile*>& tiles, const ModelConfig& model,
                            ParamSet<float>& params, const TrainConfig& cfg, const TrainOutputs& outputs = {},
                            Index start_iteration = 0,
                            const std::function<void(const LossRecord&)>& on_step = {});

/// Loads model and optimizer state from `outputs` and continues until
/// cfg.max_iterations.
std::vector<LossRecord> resume(const std::vector<const AnnotatedTile*>& tiles, const ModelConfig& model,
                               ParamSet<float>& params, const TrainConfig& cfg, const TrainOutputs& outputs,
                               const std::function<void(const LossRecord&)>& on_step = {});

std::vector<LossRecord> read_loss_curve(const std::filesystem::path& path);

}  // namespace spseg
