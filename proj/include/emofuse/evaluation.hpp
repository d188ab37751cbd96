#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "emofuse/dataset.hpp"
#include "emofuse/losses.hpp"
#include "emofuse/model.hpp"
#include "emofuse/training.hpp"

namespace emofuse {

/// Non-interpolated AP: rank by descending score (stable on ties) and
/// average precision@k over the positive positions. Empty when there are
/// no positives.
std::optional<double> average_precision(std::span<const double> scores, std::span<const int> labels);

/// Mean over the defined entries. Throws if none is defined.
double mean_ap(std::span<const std::optional<double>> per_category);
double mean_ap(std::span<const double> per_category);

/// Entry (i, j) counts samples of true class i predicted as j.
std::vector<std::vector<std::int64_t>> confusion_matrix(std::span<const int> pred_class,
                                                        std::span<const int> true_class, int n);

struct EvalReport {
  std::vector<std::string> categories;
  std::vector<std::optional<double>> per_category_ap;
  double map = 0.0;
  std::optional<std::vector<std::vector<std::int64_t>>> confusion;
  LossValues losses;
  std::int64_t samples = 0;
  nlohmann::json run_meta = nlohmann::json::object();
  std::vector<std::string> warnings;
};

/// Scores of every sample, [n][head outputs] and [n][3].
struct Predictions {
  std::vector<std::vector<double>> disc;
  std::vector<std::vector<double>> cont;
};
Predictions predict(const Model& model, const std::vector<PreparedSample>& samples, int batch_size,
                    std::uint64_t seed);

/// AP per head category, mAP, losses, and (4-class head only) the confusion
/// matrix over samples with exactly one of the four basic emotions.
EvalReport evaluate(const Model& model, const std::vector<PreparedSample>& samples, const LossWeights& lw,
                    int batch_size, std::uint64_t seed, nlohmann::json run_meta = nlohmann::json::object());

nlohmann::json report_json(const EvalReport& report);
std::string report_text(const EvalReport& report);
/// Writes report.json and report.txt into `dir`.
void write_report(const std::filesystem::path& dir, const EvalReport& report);

struct AblationRun {
  FeatureSet feature_set;
  std::optional<EvalReport> report;
  std::string error;  // set when this run failed
};

/// The four feature subsets in table order.
std::vector<FeatureSet> ablation_feature_sets();

/// Trains one fresh model per feature subset from the same initialization
/// seed and evaluates it on `eval_set`. A failing run is recorded and the
/// remaining runs continue.
std::vector<AblationRun> run_ablation(const DatasetManifest& train_set, const DatasetManifest& eval_set,
                                      const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                      const LossWeights& lw, const std::optional<std::filesystem::path>& out_dir,
                                      const nlohmann::json& config_snapshot = nlohmann::json::object());

std::string ablation_table(const std::vector<AblationRun>& runs);

struct AttentionExport {
  std::vector<std::filesystem::path> images;
  std::vector<std::filesystem::path> sidecars;
};

/// Renders the class-token row of every (layer, head) attention map as a
/// heatmap upsampled to the transformer's input resolution, under
/// `<out_dir>/attn/<sample id>/layer_{l}_head_{h}.png`, each with a `.json`
/// sidecar holding the raw matrix. Throws if the sample has no semantic
/// input.
AttentionExport export_attention_maps(const Sample& sample, const Model& model, const std::filesystem::path& out_dir);

/// Class-token attention over patches for one (layer, head), min-max
/// normalized to [0, 1] and upsampled by nearest neighbour to H x W.
Image attention_heatmap(const AttentionMaps& maps, const VitConfig& cfg, int layer, int head);

}  // namespace emofuse
