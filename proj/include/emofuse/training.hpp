#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "emofuse/dataset.hpp"
#include "emofuse/losses.hpp"
#include "emofuse/model.hpp"

namespace emofuse {

enum class OptimizerKind { Adam, SgdMomentum };

struct TrainConfig {
  int batch_size = 52;
  int epochs = 45;
  double lr = 1e-3;
  double lr_decay_factor = 0.1;
  int lr_decay_every = 15;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  FeatureSet feature_set = {1, 2, 3};

  void validate(const std::string& path) const;
};

/// lr * decay_factor^floor(epoch / decay_every)
double lr_at(int epoch, const TrainConfig& cfg);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::int64_t step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step(step) {}
  std::int64_t step;
};

struct StepLog {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  double l_disc = 0.0;
  double l_cont = 0.0;
  double l_comb = 0.0;
};

struct TrainResult {
  std::vector<StepLog> log;
  std::vector<double> epoch_loss;  // sample-weighted mean L_comb per epoch
  std::int64_t steps = 0;
  std::optional<std::filesystem::path> last_checkpoint;
};

struct TrainOptions {
  /// Receives train_log.csv and ckpt/epoch_{n}/ when set.
  std::optional<std::filesystem::path> out_dir;
  bool checkpoint_every_epoch = true;
  /// Embedded in every checkpoint's metadata.
  nlohmann::json config_snapshot = nlohmann::json::object();
  std::function<void(int epoch, double loss)> on_epoch;
};

/// Adam or SGD with momentum over every trainable parameter.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, ParameterSet& params);
  void step(double lr);

 private:
  TrainConfig cfg_;
  ParameterSet& params_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

struct LossValues {
  double l_disc = 0.0;
  double l_cont = 0.0;
  double l_comb = 0.0;
};

/// Batch losses in the differentiable form; `weights` are the category
/// weights of the head's categories.
struct BatchLoss {
  Tensor disc, cont, comb;
};
BatchLoss batch_loss(const ForwardResult& out, std::span<const PreparedSample* const> batch,
                     const LossWeights& lw, std::span<const double> weights, DiscreteHead head);

/// Sample-weighted mean losses over a dataset in evaluation mode.
LossValues evaluate_loss(const Model& model, const std::vector<PreparedSample>& samples, const LossWeights& lw,
                         int batch_size, std::uint64_t seed);

/// Trains in place. `lw.priors` is replaced by the training manifest's
/// priors. Deterministic given the model's initial state and cfg.seed.
TrainResult train(Model& model, const DatasetManifest& manifest, LossWeights lw, const TrainConfig& cfg,
                  const TrainOptions& options = {});

void write_train_log(const std::filesystem::path& path, const std::vector<StepLog>& log);

/// Checkpoint directory with metadata; see save_parameters().
void save_checkpoint(const std::filesystem::path& dir, const Model& model, const nlohmann::json& metadata);
nlohmann::json load_checkpoint(const std::filesystem::path& dir, Model& model);

}  // namespace emofuse
