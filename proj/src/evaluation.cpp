#include "emofuse/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "emofuse/rng.hpp"

namespace emofuse {

namespace fs = std::filesystem;
using nlohmann::json;

std::optional<double> average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("average_precision: " + std::to_string(scores.size()) + " scores but " +
                     std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const int y = labels[order[k]];
    if (y != 0 && y != 1) throw std::invalid_argument("average_precision: labels must be 0 or 1");
    if (y == 1) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

double mean_ap(std::span<const std::optional<double>> per_category) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& ap : per_category) {
    if (!ap) continue;
    sum += *ap;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mean_ap: no category has a defined AP");
  return sum / static_cast<double>(n);
}

double mean_ap(std::span<const double> per_category) {
  std::vector<std::optional<double>> v(per_category.begin(), per_category.end());
  return mean_ap(std::span<const std::optional<double>>(v));
}

std::vector<std::vector<std::int64_t>> confusion_matrix(std::span<const int> pred_class, std::span<const int> true_class,
                                                        int n) {
  if (pred_class.size() != true_class.size()) throw ShapeError("confusion_matrix: length mismatch");
  if (n < 1) throw std::invalid_argument("confusion_matrix: n must be at least 1");
  std::vector<std::vector<std::int64_t>> m(static_cast<std::size_t>(n), std::vector<std::int64_t>(n, 0));
  for (std::size_t i = 0; i < pred_class.size(); ++i) {
    const int p = pred_class[i], t = true_class[i];
    if (p < 0 || p >= n || t < 0 || t >= n) {
      throw std::out_of_range("confusion_matrix: class id outside [0, " + std::to_string(n) + ") at index " +
                              std::to_string(i));
    }
    ++m[t][p];
  }
  return m;
}

Predictions predict(const Model& model, const std::vector<PreparedSample>& samples, int batch_size,
                    std::uint64_t seed) {
  Rng rng(seed, "embrace-eval");
  Predictions p;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const PreparedSample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[i]);
    const auto out = model.forward(batch, false, rng);
    const auto kd = out.heads.disc.dim(1), kc = out.heads.cont.dim(1);
    auto dv = out.heads.disc.values();
    auto cv = out.heads.cont.values();
    for (std::size_t r = 0; r < batch.size(); ++r) {
      p.disc.emplace_back(dv.begin() + r * kd, dv.begin() + (r + 1) * kd);
      p.cont.emplace_back(cv.begin() + r * kc, cv.begin() + (r + 1) * kc);
    }
  }
  return p;
}

EvalReport evaluate(const Model& model, const std::vector<PreparedSample>& samples, const LossWeights& lw,
                    int batch_size, std::uint64_t seed, json run_meta) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  const auto head = model.config().fusion.head;
  const auto cats = head_categories(head);
  const Predictions pred = predict(model, samples, batch_size, seed);

  EvalReport r;
  r.samples = static_cast<std::int64_t>(samples.size());
  r.run_meta = std::move(run_meta);
  for (std::size_t c = 0; c < cats.size(); ++c) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      scores.push_back(pred.disc[i][c]);
      labels.push_back(samples[i].annotation.disc[cats[c]]);
    }
    const std::string name(kCategoryNames[cats[c]]);
    r.categories.push_back(name);
    r.per_category_ap.push_back(average_precision(scores, labels));
    if (!r.per_category_ap.back()) {
      r.warnings.push_back("category " + name + " has no positive samples; excluded from mAP");
    }
  }
  r.map = mean_ap(std::span<const std::optional<double>>(r.per_category_ap));
  r.losses = evaluate_loss(model, samples, lw, batch_size, seed);

  if (head == DiscreteHead::Softmax4) {
    std::vector<int> truth, guess;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      int positives = 0, t = -1;
      for (std::size_t c = 0; c < cats.size(); ++c) {
        if (samples[i].annotation.disc[cats[c]]) {
          ++positives;
          t = static_cast<int>(c);
        }
      }
      if (positives != 1) continue;
      truth.push_back(t);
      guess.push_back(static_cast<int>(std::max_element(pred.disc[i].begin(), pred.disc[i].end()) - pred.disc[i].begin()));
    }
    r.confusion = confusion_matrix(guess, truth, static_cast<int>(cats.size()));
  }
  return r;
}

json report_json(const EvalReport& r) {
  json j;
  j["categories"] = r.categories;
  json ap = json::array();
  for (const auto& a : r.per_category_ap) ap.push_back(a ? json(*a) : json(nullptr));
  j["per_category_ap"] = ap;
  j["map"] = r.map;
  j["confusion"] = r.confusion ? json(*r.confusion) : json(nullptr);
  j["losses"] = {{"L_disc", r.losses.l_disc}, {"L_cont", r.losses.l_cont}, {"L_comb", r.losses.l_comb}};
  j["samples"] = r.samples;
  j["warnings"] = r.warnings;
  j["run_meta"] = r.run_meta;
  return j;
}

namespace {

std::string percent(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string lpad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

}  // namespace

std::string report_text(const EvalReport& r) {
  std::ostringstream out;
  out << pad("Labels", 18) << lpad("AP", 8) << "\n";
  for (std::size_t i = 0; i < r.categories.size(); ++i) {
    out << pad(r.categories[i], 18) << lpad(percent(r.per_category_ap[i]), 8) << "\n";
  }
  out << pad("mAP", 18) << lpad(percent(r.map), 8) << "\n\n";
  char buf[128];
  std::snprintf(buf, sizeof buf, "L_disc %.6f  L_cont %.6f  L_comb %.6f  (%lld samples)\n", r.losses.l_disc,
                r.losses.l_cont, r.losses.l_comb, static_cast<long long>(r.samples));
  out << buf;
  if (r.confusion) {
    out << "\nconfusion (rows: true, columns: predicted)\n" << pad("", 16);
    for (const auto& c : r.categories) out << lpad(c.substr(0, 12), 14);
    out << "\n";
    for (std::size_t i = 0; i < r.confusion->size(); ++i) {
      out << pad(r.categories[i], 16);
      for (auto v : (*r.confusion)[i]) out << lpad(std::to_string(v), 14);
      out << "\n";
    }
  }
  for (const auto& w : r.warnings) out << "warning: " << w << "\n";
  return out.str();
}

void write_report(const fs::path& dir, const EvalReport& report) {
  fs::create_directories(dir);
  std::ofstream(dir / "report.json") << report_json(report).dump(2) << "\n";
  std::ofstream(dir / "report.txt") << report_text(report);
}

// ---------------------------------------------------------------------------

std::vector<FeatureSet> ablation_feature_sets() { return {{1}, {1, 2}, {1, 3}, {1, 2, 3}}; }

namespace {

std::string feature_dir(const FeatureSet& fs) {
  std::string s = "features";
  for (int f : fs) s += "_" + std::to_string(f);
  return s;
}

}  // namespace

std::vector<AblationRun> run_ablation(const DatasetManifest& train_set, const DatasetManifest& eval_set,
                                      const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                      const LossWeights& lw, const std::optional<fs::path>& out_dir,
                                      const json& config_snapshot) {
  std::vector<AblationRun> runs;
  const std::uint64_t init_seed = substream_seed(train_cfg.seed, "init");
  for (const auto& set : ablation_feature_sets()) {
    AblationRun run;
    run.feature_set = set;
    try {
      TrainConfig cfg = train_cfg;
      cfg.feature_set = set;
      Model model(model_cfg, init_seed);
      TrainOptions opts;
      opts.checkpoint_every_epoch = false;
      opts.config_snapshot = config_snapshot;
      std::optional<fs::path> dir;
      if (out_dir) dir = *out_dir / "ablation" / feature_dir(set);
      opts.out_dir = dir;
      train(model, train_set, lw, cfg, opts);

      LossWeights eval_lw = lw;
      eval_lw.priors = compute_priors(train_set.samples);
      const auto prepared = model.prepare_all(eval_set.samples, set);
      json meta = {{"feature_set", set},
                   {"seed", train_cfg.seed},
                   {"init_seed", init_seed},
                   {"train_samples", train_set.samples.size()},
                   {"eval_samples", eval_set.samples.size()},
                   {"config", config_snapshot}};
      run.report = evaluate(model, prepared, eval_lw, cfg.batch_size, cfg.seed, meta);
      if (dir) {
        write_report(*dir, *run.report);
        save_checkpoint(*dir / "ckpt" / ("epoch_" + std::to_string(cfg.epochs)), model,
                        {{"epoch", cfg.epochs}, {"feature_set", set}, {"config", config_snapshot}});
      }
    } catch (const std::exception& e) {
      run.error = e.what();
    }
    runs.push_back(std::move(run));
  }
  if (out_dir) {
    fs::create_directories(*out_dir);
    std::ofstream(*out_dir / "ablation_summary.txt") << ablation_table(runs);
  }
  return runs;
}

std::string ablation_table(const std::vector<AblationRun>& runs) {
  std::ostringstream out;
  std::optional<double> base;
  for (const auto& r : runs)
    if (r.feature_set == FeatureSet{1} && r.report) base = r.report->map;

  out << pad("Features", 12) << lpad("mAP", 8) << lpad("vs {1}", 9) << "\n";
  for (const auto& r : runs) {
    out << pad(feature_set_label(r.feature_set), 12);
    if (!r.report) {
      out << "  failed: " << r.error << "\n";
      continue;
    }
    out << lpad(percent(r.report->map), 8);
    if (base) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%+.2f", 100.0 * (r.report->map - *base));
      out << lpad(buf, 9);
    }
    out << "\n";
  }

  // Per-category breakdown, one column per feature set.
  out << "\n" << pad("Labels", 18);
  for (const auto& r : runs) out << lpad(feature_set_label(r.feature_set), 10);
  out << "\n";
  const EvalReport* first = nullptr;
  for (const auto& r : runs)
    if (r.report && !first) first = &*r.report;
  if (first) {
    for (std::size_t c = 0; c < first->categories.size(); ++c) {
      out << pad(first->categories[c], 18);
      for (const auto& r : runs) out << lpad(r.report ? percent(r.report->per_category_ap[c]) : "-", 10);
      out << "\n";
    }
    out << pad("mAP", 18);
    for (const auto& r : runs) out << lpad(r.report ? percent(r.report->map) : "-", 10);
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------

Image attention_heatmap(const AttentionMaps& maps, const VitConfig& cfg, int layer, int head) {
  const int gh = cfg.height / cfg.patch, gw = cfg.width / cfg.patch;
  std::vector<double> row(static_cast<std::size_t>(gh * gw));
  for (int p = 0; p < gh * gw; ++p) row[p] = maps.at(layer, head, 0, p + 1);
  const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
  const double range = *hi - *lo;
  Image img(cfg.height, cfg.width, 1);
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      const double v = row[static_cast<std::size_t>((y / cfg.patch) * gw + x / cfg.patch)];
      img.at(y, x, 0) = range > 0.0 ? static_cast<float>((v - *lo) / range) : 0.0f;
    }
  }
  return img;
}

AttentionExport export_attention_maps(const Sample& sample, const Model& model, const fs::path& out_dir) {
  const PreparedSample p = model.prepare(sample, {2});
  if (!p.semantic) {
    throw std::invalid_argument("export_attention_maps: sample '" + sample.id + "' has no semantic input image");
  }
  const auto& vit = model.semantic_encoder();
  const auto& cfg = vit.config();
  std::vector<AttentionMaps> maps;
  vit.forward(stack_constant({*p.semantic}), &maps);
  const AttentionMaps& m = maps.front();

  const fs::path dir = out_dir / "attn" / sample.id;
  fs::create_directories(dir);
  AttentionExport result;
  for (int l = 0; l < m.layers; ++l) {
    for (int h = 0; h < m.heads; ++h) {
      const std::string stem = "layer_" + std::to_string(l) + "_head_" + std::to_string(h);
      const fs::path png = dir / (stem + ".png");
      save_png(png, attention_heatmap(m, cfg, l, h));
      json matrix = json::array();
      for (int i = 0; i < m.tokens; ++i) {
        json row = json::array();
        for (int j = 0; j < m.tokens; ++j) row.push_back(m.at(l, h, i, j));
        matrix.push_back(std::move(row));
      }
      const fs::path sidecar = dir / (stem + ".json");
      std::ofstream(sidecar) << json{{"sample", sample.id},
                                     {"layer", l},
                                     {"head", h},
                                     {"tokens", m.tokens},
                                     {"patch_grid", {cfg.height / cfg.patch, cfg.width / cfg.patch}},
                                     {"attention", matrix}}
                                    .dump()
                             << "\n";
      result.images.push_back(png);
      result.sidecars.push_back(sidecar);
    }
  }
  return result;
}

}  // namespace emofuse
