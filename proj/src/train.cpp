#include "spseg/train.hpp"

#include "spseg/checkpoint.hpp"
#include "spseg/optim.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

namespace spseg {
namespace {

std::string csv_line(const LossRecord& r) {
  std::ostringstream ss;
  ss.precision(9);
  ss << r.iteration << ',' << r.total << ',' << r.cls << ',' << r.dice << ',' << r.bce << ',' << r.obj;
  return ss.str();
}

bool params_finite(const ParamSet<float>& ps) {
  for (const auto& p : ps)
    if (!p.value.all_finite()) return false;
  return true;
}

template <typename Fn>
void replace_file(const std::filesystem::path& path, Fn&& write) {
  auto tmp = path;
  tmp += ".tmp";
  write(tmp);
  std::filesystem::rename(tmp, path);
}

void save_state(const TrainOutputs& out, const ParamSet<float>& params, Index iteration) {
  replace_file(out.checkpoint(), [&](const auto& p) { save_checkpoint(p, params); });
  replace_file(out.optimizer(), [&](const auto& p) { save_optimizer_state(p, params, static_cast<long>(iteration)); });
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
  if (max_iterations < 0) throw ConfigError("train: max_iterations must be non-negative");
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("train: lr must be finite and non-negative");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train: momentum must lie in [0, 1)");
  if (!(clip_norm >= 0)) throw ConfigError("train: clip_norm must be non-negative");
  if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be positive");
  weights.validate();
  if (weights.cls + weights.dice + weights.bce + weights.obj <= 0)
    throw ConfigError("train: at least one loss weight must be positive");
}

std::vector<Index> batch_indices(Index n, Index batch, Index iteration, std::uint64_t seed) {
  std::vector<Index> out;
  std::vector<Index> perm;
  Index perm_epoch = -1;
  for (Index k = 0; k < batch; ++k) {
    const Index pos = iteration * batch + k;
    const Index epoch = pos / n;
    if (epoch != perm_epoch) {
      perm.resize(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), Index{0});
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
      rng.shuffle(perm.begin(), perm.end());
      perm_epoch = epoch;
    }
    out.push_back(perm[static_cast<std::size_t>(pos % n)]);
  }
  return out;
}

template <typename Scalar>
TileLoss<Scalar> tile_loss(Graph<Scalar>& graph, const Tensor<Scalar>& image, const InstanceTargets<Scalar>& targets,
                           const ModelConfig& model, ParamSet<Scalar>& params, const TrainConfig& cfg,
                           const FrozenMatch<Scalar>* frozen) {
  const auto out = forward(graph.constant(image), model, params);
  Assignment assignment = frozen ? frozen->assignment
                                 : match_predictions(out.class_logits.value(), out.mask_logits.value(), targets, cfg.cost);
  auto loss = compute_loss(out.class_logits, out.objectness_logits, out.mask_logits, targets, assignment, cfg.weights,
                           frozen ? &frozen->objectness_target : nullptr);
  return {std::move(loss), std::move(assignment)};
}

std::vector<LossRecord> fit(const std::vector<const AnnotatedTile*>& tiles, const ModelConfig& model,
                            ParamSet<float>& params, const TrainConfig& cfg, const TrainOutputs& outputs,
                            Index start_iteration, const std::function<void(const LossRecord&)>& on_step) {
  cfg.validate();
  model.validate();
  if (tiles.empty()) throw ConfigError("fit: training set is empty");

  std::vector<Tensor<float>> images;
  std::vector<InstanceTargets<float>> targets;
  for (const auto* t : tiles) {
    auto padded = pad_to_grid(t->image, 16).image;
    images.push_back(padded.reshaped({1, 3, padded.dim(1), padded.dim(2)}));
    targets.push_back(tile_targets<float>(*t));
  }

  const bool persist = !outputs.dir.empty();
  std::ofstream curve;
  if (persist) {
    std::filesystem::create_directories(outputs.dir);
    std::vector<LossRecord> kept;
    if (start_iteration > 0 && std::filesystem::exists(outputs.loss_curve()))
      for (const auto& r : read_loss_curve(outputs.loss_curve()))
        if (r.iteration <= start_iteration) kept.push_back(r);
    curve.open(outputs.loss_curve(), std::ios::trunc);
    curve << kLossCurveHeader << '\n';
    for (const auto& r : kept) curve << csv_line(r) << '\n';
    curve.flush();
  }

  std::vector<LossRecord> history;
  const auto n = static_cast<Index>(tiles.size());
  const float inv_batch = 1.0f / static_cast<float>(cfg.batch_size);
  for (Index it = start_iteration; it < cfg.max_iterations; ++it) {
    LossRecord rec;
    rec.iteration = it + 1;
    for (Index idx : batch_indices(n, cfg.batch_size, it, cfg.seed)) {
      Graph<float> graph;
      const auto i = static_cast<std::size_t>(idx);
      auto diverged = [&](const std::string& why) {
        return DivergenceError(it + 1, "training diverged at update " + std::to_string(it + 1) + " (" + why + ")");
      };
      std::optional<TileLoss<float>> result;
      try {
        result.emplace(tile_loss(graph, images[i], targets[i], model, params, cfg));
      } catch (const std::domain_error&) {
        throw diverged("non-finite predictions");
      }
      const auto& l = result->loss;
      const double total = static_cast<double>(l.total.value()[0]);
      if (!std::isfinite(total)) throw diverged("loss " + std::to_string(total));
      graph.backward(scale(l.total, inv_batch));
      rec.total += total * inv_batch;
      rec.cls += l.cls * inv_batch;
      rec.dice += l.dice * inv_batch;
      rec.bce += l.bce * inv_batch;
      rec.obj += l.obj * inv_batch;
    }
    if (cfg.clip_norm > 0) clip_grad_norm(params, static_cast<float>(cfg.clip_norm));
    sgd_step(params, static_cast<float>(cfg.lr), static_cast<float>(cfg.momentum));
    if (!params_finite(params))
      throw DivergenceError(it + 1, "training diverged at update " + std::to_string(it + 1) +
                                        " (non-finite parameters)");
    history.push_back(rec);
    if (persist) {
      curve << csv_line(rec) << '\n';
      curve.flush();
      if (rec.iteration % cfg.checkpoint_every == 0 || rec.iteration == cfg.max_iterations)
        save_state(outputs, params, rec.iteration);
    }
    if (on_step) on_step(rec);
  }
  if (persist && (history.empty() || history.back().iteration % cfg.checkpoint_every != 0))
    save_state(outputs, params, std::max(start_iteration, history.empty() ? Index{0} : history.back().iteration));
  return history;
}

std::vector<LossRecord> resume(const std::vector<const AnnotatedTile*>& tiles, const ModelConfig& model,
                               ParamSet<float>& params, const TrainConfig& cfg, const TrainOutputs& outputs,
                               const std::function<void(const LossRecord&)>& on_step) {
  load_checkpoint(outputs.checkpoint(), params);
  const long start = load_optimizer_state(outputs.optimizer(), params);
  return fit(tiles, model, params, cfg, outputs, static_cast<Index>(start), on_step);
}

std::vector<LossRecord> read_loss_curve(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kLossCurveHeader)
    throw std::runtime_error(path.string() + ": missing loss curve header");
  std::vector<LossRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRecord r;
    char c1, c2, c3, c4, c5;
    std::istringstream ss(line);
    if (!(ss >> r.iteration >> c1 >> r.total >> c2 >> r.cls >> c3 >> r.dice >> c4 >> r.bce >> c5 >> r.obj))
      throw std::runtime_error(path.string() + ": malformed record '" + line + "'");
    out.push_back(r);
  }
  return out;
}

template TileLoss<float> tile_loss<float>(Graph<float>&, const Tensor<float>&, const InstanceTargets<float>&,
                                          const ModelConfig&, ParamSet<float>&, const TrainConfig&,
                                          const FrozenMatch<float>*);
template TileLoss<double> tile_loss<double>(Graph<double>&, const Tensor<double>&, const InstanceTargets<double>&,
                                            const ModelConfig&, ParamSet<double>&, const TrainConfig&,
                                            const FrozenMatch<double>*);

}  // namespace spseg
