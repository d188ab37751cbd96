// emofuse: generate synthetic data, train, evaluate, run the feature
// ablation and export attention maps.

#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "emofuse/config.hpp"
#include "emofuse/evaluation.hpp"
#include "emofuse/rng.hpp"
#include "emofuse/synthetic.hpp"

namespace fs = std::filesystem;
using namespace emofuse;
using nlohmann::json;

namespace {

struct Globals {
  std::optional<fs::path> config;
  std::optional<fs::path> out;
  std::optional<std::uint64_t> seed;
};

RunConfig load_config(const Globals& g) {
  RunConfig cfg = g.config ? load_run_config(*g.config) : RunConfig{};
  if (g.seed) cfg.seed = cfg.training.seed = *g.seed;
  cfg.validate();
  return cfg;
}

void write_snapshot(const fs::path& dir, const json& snapshot) {
  std::ofstream(dir / "config.json") << snapshot.dump(2) << "\n";
}

DatasetManifest load_split(const RunConfig& cfg, Split split) {
  const fs::path path = cfg.dataset.manifest(split);
  if (!fs::exists(path)) {
    throw std::runtime_error("manifest " + path.string() + " not found (run `generate` or set dataset.dir)");
  }
  return load_manifest(path, split);
}

DatasetManifest concat(DatasetManifest a, const DatasetManifest& b) {
  a.samples.insert(a.samples.end(), b.samples.begin(), b.samples.end());
  a.category_priors = compute_priors(a.samples);
  return a;
}

int cmd_generate(const Globals& g, std::int64_t n_flag, std::optional<double> signal_flag) {
  RunConfig cfg = g.config ? load_run_config(*g.config) : RunConfig{};
  if (n_flag > 0) cfg.dataset.n = n_flag;
  if (signal_flag) cfg.dataset.scene_signal = *signal_flag;
  const std::uint64_t seed = g.seed.value_or(cfg.seed);
  cfg.validate();

  fs::path dir;
  if (g.out) {
    dir = *g.out;
  } else if (g.config) {
    dir = cfg.dataset.dir;
  } else {
    const char* env = std::getenv("EMOFUSE_OUT");
    dir = env && *env ? fs::path(env) / "data" : fs::path("data");
  }
  ensure_writable_dir(dir);

  const auto all = generate_synthetic(cfg.dataset.n, seed, cfg.dataset.scene_signal);
  auto parts = split_70_15_15(all);
  for (auto& part : parts) {
    const std::string name(split_name(part.split));
    materialize_assets(part, dir, dir / "assets" / name);
    write_manifest(part, dir / (name + ".jsonl"));
    std::printf("%-5s %zu samples -> %s\n", name.c_str(), part.samples.size(), (dir / (name + ".jsonl")).c_str());
    if (part.samples.empty()) std::fprintf(stderr, "warning: %s split is empty (n=%lld)\n", name.c_str(),
                                            static_cast<long long>(cfg.dataset.n));
  }
  std::ofstream(dir / "generate.json")
      << json{{"n", cfg.dataset.n}, {"seed", seed}, {"scene_signal", cfg.dataset.scene_signal}}.dump(2) << "\n";
  return 0;
}

int cmd_train(const Globals& g) {
  const RunConfig cfg = load_config(g);
  const fs::path out = resolve_output_dir(g.out, cfg);
  ensure_writable_dir(out);
  const json snapshot = to_json(cfg);
  write_snapshot(out, snapshot);

  const DatasetManifest train_set = load_split(cfg, Split::Train);
  Model model(cfg.model, substream_seed(cfg.seed, "init"));
  TrainOptions opts;
  opts.out_dir = out;
  opts.config_snapshot = snapshot;
  opts.on_epoch = [&](int epoch, double loss) {
    std::printf("epoch %3d/%d  lr %.1e  L_comb %.6f\n", epoch, cfg.training.epochs, lr_at(epoch - 1, cfg.training),
                loss);
    std::fflush(stdout);
  };
  const TrainResult r = train(model, train_set, cfg.losses, cfg.training, opts);
  std::printf("%lld steps; log %s\n", static_cast<long long>(r.steps), (out / "train_log.csv").c_str());
  if (r.last_checkpoint) std::printf("checkpoint %s\n", r.last_checkpoint->c_str());
  return 0;
}

// Config from --config when given, otherwise the snapshot stored in the
// checkpoint.
std::pair<RunConfig, json> checkpoint_config(const Globals& g, const fs::path& ckpt) {
  if (!fs::is_directory(ckpt)) throw std::runtime_error("checkpoint " + ckpt.string() + " does not exist");
  std::ifstream in(ckpt / "params.json");
  if (!in) throw std::runtime_error("checkpoint " + ckpt.string() + " has no params.json");
  const json meta = json::parse(in).value("metadata", json::object());
  RunConfig cfg;
  if (g.config) {
    cfg = load_run_config(*g.config);
  } else if (meta.contains("config") && !meta["config"].empty()) {
    cfg = parse_run_config(meta["config"]);
  } else {
    throw std::runtime_error("checkpoint " + ckpt.string() + " carries no config; pass --config");
  }
  if (g.seed) cfg.seed = cfg.training.seed = *g.seed;
  cfg.validate();
  return {cfg, meta};
}

int cmd_eval(const Globals& g, const fs::path& ckpt, const std::string& split_arg) {
  const auto split = parse_split(split_arg);
  if (!split) throw std::runtime_error("--split must be train, val or test");
  auto [cfg, meta] = checkpoint_config(g, ckpt);
  const fs::path out = resolve_output_dir(g.out, cfg) / ("eval_" + split_arg);
  ensure_writable_dir(out);

  Model model(cfg.model, substream_seed(cfg.seed, "init"));
  load_checkpoint(ckpt, model);
  FeatureSet fs = cfg.training.feature_set;
  if (meta.contains("feature_set")) fs = meta["feature_set"].get<FeatureSet>();

  LossWeights lw = cfg.losses;
  if (meta.contains("category_priors")) {
    lw.priors = meta["category_priors"].get<std::array<double, kNumDiscrete>>();
  } else {
    lw.priors = load_split(cfg, Split::Train).category_priors;
  }
  const DatasetManifest data = load_split(cfg, *split);
  const json snapshot = to_json(cfg);
  const json run_meta = {{"checkpoint", fs::absolute(ckpt).string()},
                         {"split", split_arg},
                         {"feature_set", fs},
                         {"seed", cfg.seed},
                         {"config", snapshot}};
  const EvalReport report =
      evaluate(model, model.prepare_all(data.samples, fs), lw, cfg.training.batch_size, cfg.seed, run_meta);
  write_report(out, report);
  std::cout << report_text(report) << "report " << (out / "report.json").string() << "\n";
  return 0;
}

int cmd_ablate(const Globals& g) {
  const RunConfig cfg = load_config(g);
  const fs::path out = resolve_output_dir(g.out, cfg);
  ensure_writable_dir(out);
  const json snapshot = to_json(cfg);
  write_snapshot(out, snapshot);
  const DatasetManifest train_set = load_split(cfg, Split::Train);
  const DatasetManifest eval_set = concat(load_split(cfg, Split::Val), load_split(cfg, Split::Test));
  if (eval_set.samples.empty()) throw std::runtime_error("val and test splits are both empty");
  const auto runs = run_ablation(train_set, eval_set, cfg.model, cfg.training, cfg.losses, out, snapshot);
  std::cout << ablation_table(runs) << "summary " << (out / "ablation_summary.txt").string() << "\n";
  for (const auto& r : runs)
    if (!r.report) return 1;
  return 0;
}

int cmd_attn(const Globals& g, const fs::path& ckpt, const std::string& split_arg, const std::string& sample_id) {
  const auto split = parse_split(split_arg);
  if (!split) throw std::runtime_error("--split must be train, val or test");
  auto [cfg, meta] = checkpoint_config(g, ckpt);
  const fs::path out = resolve_output_dir(g.out, cfg);
  ensure_writable_dir(out);
  Model model(cfg.model, substream_seed(cfg.seed, "init"));
  load_checkpoint(ckpt, model);
  const DatasetManifest data = load_split(cfg, *split);
  const Sample* sample = nullptr;
  for (const auto& s : data.samples)
    if (s.id == sample_id || (sample_id.empty() && !sample)) sample = &s;
  if (!sample) throw std::runtime_error("no sample '" + sample_id + "' in the " + split_arg + " split");
  const AttentionExport e = export_attention_maps(*sample, model, out);
  std::printf("%zu maps for %s under %s\n", e.images.size(), sample->id.c_str(),
              (out / "attn" / sample->id).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware multimodal emotion recognition toolkit"};
  app.require_subcommand(1);
  Globals g;
  std::string config, out;
  std::uint64_t seed = 0;
  app.add_option("--config", config, "Run config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", out, "Output directory (falls back to the config, then $EMOFUSE_OUT)");
  auto* seed_opt = app.add_option("--seed", seed, "Root seed, overrides the config");

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset as train/val/test manifests");
  std::int64_t n = 0;
  double signal = 0.5;
  gen->add_option("--n", n, "Number of samples")->check(CLI::PositiveNumber);
  auto* signal_opt = gen->add_option("--scene-signal", signal, "Share of label information carried by the scene")
                         ->check(CLI::Range(0.0, 1.0));

  app.add_subcommand("train", "Train on the training split");

  std::string ckpt, split = "test", sample;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  ev->add_option("--split", split, "train, val or test");

  app.add_subcommand("ablate", "Train and evaluate the four feature subsets");

  auto* attn = app.add_subcommand("attn", "Export semantic attention maps for one sample");
  attn->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  attn->add_option("--split", split, "train, val or test");
  attn->add_option("--sample", sample, "Sample id (default: first of the split)");

  // Global options may also follow the subcommand.
  for (auto* sub : app.get_subcommands([](CLI::App*) { return true; })) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);
  if (!config.empty()) g.config = config;
  if (!out.empty()) g.out = out;
  if (seed_opt->count()) g.seed = seed;

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "generate") return cmd_generate(g, n, signal_opt->count() ? std::optional(signal) : std::nullopt);
    if (cmd == "train") return cmd_train(g);
    if (cmd == "eval") return cmd_eval(g, ckpt, split);
    if (cmd == "ablate") return cmd_ablate(g);
    if (cmd == "attn") return cmd_attn(g, ckpt, split, sample);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const TrainingDiverged& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
