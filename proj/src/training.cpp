#include "emofuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "emofuse/tensor_io.hpp"

namespace emofuse {

namespace fs = std::filesystem;

void TrainConfig::validate(const std::string& path) const {
  if (batch_size < 1) throw ConfigError(path + ".batch_size must be at least 1");
  if (epochs < 0) throw ConfigError(path + ".epochs must be nonnegative");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError(path + ".lr must be positive");
  if (!(lr_decay_factor > 0.0) || !std::isfinite(lr_decay_factor)) {
    throw ConfigError(path + ".lr_decay_factor must be positive");
  }
  if (lr_decay_every < 1) throw ConfigError(path + ".lr_decay_every must be at least 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError(path + ".momentum must lie in [0, 1)");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError(path + ".adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError(path + ".adam_beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError(path + ".adam_eps must be positive");
  validate_feature_set(feature_set, path + ".feature_set");
}

double lr_at(int epoch, const TrainConfig& cfg) {
  return cfg.lr * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_every);
}

// ---------------------------------------------------------------------------

Optimizer::Optimizer(const TrainConfig& cfg, ParameterSet& params) : cfg_(cfg), params_(params) {
  for (const auto& p : params_.all()) {
    m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    if (cfg.optimizer == OptimizerKind::Adam) v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
  }
}

void Optimizer::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
  auto& all = params_.all();
  for (std::size_t k = 0; k < all.size(); ++k) {
    Parameter& p = all[k];
    if (!p.trainable || !p.tensor.has_grad()) continue;
    auto g = p.tensor.grad();
    auto x = p.tensor.values();
    auto& m = m_[k];
    if (cfg_.optimizer == OptimizerKind::Adam) {
      auto& v = v_[k];
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = cfg_.adam_beta1 * m[i] + (1.0 - cfg_.adam_beta1) * g[i];
        v[i] = cfg_.adam_beta2 * v[i] + (1.0 - cfg_.adam_beta2) * double(g[i]) * g[i];
        x[i] -= static_cast<Real>(lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.adam_eps));
      }
    } else {
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = cfg_.momentum * m[i] + g[i];
        x[i] -= static_cast<Real>(lr * m[i]);
      }
    }
  }
}

// ---------------------------------------------------------------------------

BatchLoss batch_loss(const ForwardResult& out, std::span<const PreparedSample* const> batch, const LossWeights& lw,
                     std::span<const double> weights, DiscreteHead head) {
  BatchLoss l;
  l.disc = loss_disc(out.heads.disc, discrete_targets(batch, head), weights);
  l.cont = loss_cont(out.heads.cont, continuous_targets(batch), lw.v, lw.huber_delta);
  l.comb = loss_comb(l.disc, l.cont, lw);
  return l;
}

namespace {

std::vector<double> head_weights(const LossWeights& lw, DiscreteHead head) {
  const auto all = category_weights(lw);
  std::vector<double> w;
  for (auto i : head_categories(head)) w.push_back(all[i]);
  return w;
}

}  // namespace

LossValues evaluate_loss(const Model& model, const std::vector<PreparedSample>& samples, const LossWeights& lw,
                         int batch_size, std::uint64_t seed) {
  const auto head = model.config().fusion.head;
  const auto w = head_weights(lw, head);
  Rng rng(seed, "embrace-eval");
  LossValues total;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const PreparedSample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[i]);
    const auto out = model.forward(batch, false, rng);
    const auto l = batch_loss(out, batch, lw, w, head);
    const double n = static_cast<double>(batch.size());
    total.l_disc += n * l.disc.item();
    total.l_cont += n * l.cont.item();
    total.l_comb += n * l.comb.item();
  }
  if (!samples.empty()) {
    const double n = static_cast<double>(samples.size());
    total.l_disc /= n;
    total.l_cont /= n;
    total.l_comb /= n;
  }
  return total;
}

void write_train_log(const fs::path& path, const std::vector<StepLog>& log) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,epoch,lr,L_disc,L_cont,L_comb\n";
  char line[256];
  for (const auto& r : log) {
    std::snprintf(line, sizeof line, "%lld,%d,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(r.step), r.epoch, r.lr,
                  r.l_disc, r.l_cont, r.l_comb);
    out << line;
  }
}

void save_checkpoint(const fs::path& dir, const Model& model, const nlohmann::json& metadata) {
  save_parameters(dir, model.parameters(), metadata);
}

nlohmann::json load_checkpoint(const fs::path& dir, Model& model) {
  return load_parameters(dir, model.parameters());
}

TrainResult train(Model& model, const DatasetManifest& manifest, LossWeights lw, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate("training");
  if (manifest.samples.empty()) throw std::invalid_argument("train: the training manifest is empty");
  lw.priors = compute_priors(manifest.samples);
  lw.validate("losses");
  const auto head = model.config().fusion.head;
  const auto w = head_weights(lw, head);

  const auto prepared = model.prepare_all(manifest.samples, cfg.feature_set);
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(cfg.seed, "data-shuffle");
  Rng embrace_rng(cfg.seed, "embrace");
  Optimizer opt(cfg, model.parameters());

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    shuffle_rng.shuffle(order.begin(), order.end());
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const PreparedSample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&prepared[order[i]]);
      const std::int64_t step = result.steps + 1;

      BatchLoss l;
      try {
        const auto out = model.forward(batch, true, embrace_rng);
        l = batch_loss(out, batch, lw, w, head);
        if (!std::isfinite(l.comb.item())) throw NonFiniteError("loss is not finite");
        model.parameters().zero_grad();
        l.comb.backward();
        opt.step(lr);
      } catch (const NonFiniteError& e) {
        throw TrainingDiverged(step, e.what());
      }
      result.steps = step;
      result.log.push_back({step, epoch + 1, lr, l.disc.item(), l.cont.item(), l.comb.item()});
      epoch_sum += static_cast<double>(batch.size()) * l.comb.item();
    }
    const double epoch_loss = epoch_sum / static_cast<double>(order.size());
    result.epoch_loss.push_back(epoch_loss);

    if (options.out_dir && options.checkpoint_every_epoch) {
      const fs::path dir = *options.out_dir / "ckpt" / ("epoch_" + std::to_string(epoch + 1));
      nlohmann::json meta = {{"epoch", epoch + 1},
                             {"step", result.steps},
                             {"feature_set", cfg.feature_set},
                             {"category_priors", lw.priors},
                             {"config", options.config_snapshot}};
      save_checkpoint(dir, model, meta);
      result.last_checkpoint = dir;
    }
    if (options.on_epoch) options.on_epoch(epoch + 1, epoch_loss);
  }
  if (options.out_dir) write_train_log(*options.out_dir / "train_log.csv", result.log);
  return result;
}

}  // namespace emofuse
