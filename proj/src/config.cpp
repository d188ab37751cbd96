#include "emofuse/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace emofuse {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// One JSON object under a dotted path. Tracks which keys were consumed so
// leftovers can be reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  void integer(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(field(key) + " must be an integer");
      const auto x = v->get<std::int64_t>();
      if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(field(key) + " is out of range");
      out = static_cast<int>(x);
    }
  }
  void integer(const std::string& key, std::int64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(field(key) + " must be an integer");
      out = v->get<std::int64_t>();
    }
  }
  void seed(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
        throw ConfigError(field(key) + " must be a nonnegative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key) + " must be a number");
      out = v->get<double>();
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key) + " must be true or false");
      out = v->get<bool>();
    }
  }
  void string(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(field(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  template <std::size_t N, class T>
  void array(const std::string& key, std::array<T, N>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != N) {
        throw ConfigError(field(key) + " must be an array of " + std::to_string(N) + " numbers");
      }
      for (std::size_t i = 0; i < N; ++i) {
        const json& e = (*v)[i];
        if (!e.is_number() || (std::is_integral_v<T> && !e.is_number_integer())) {
          throw ConfigError(field(key) + "[" + std::to_string(i) + "] must be " +
                            (std::is_integral_v<T> ? "an integer" : "a number"));
        }
        out[i] = e.get<T>();
      }
    }
  }
  std::optional<Reader> object(const std::string& key) {
    if (const json* v = find(key)) return Reader(*v, field(key));
    return std::nullopt;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown field " + field(it.key()));
    }
  }

 private:
  std::string where() const { return path_.empty() ? "the config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read(Reader r, ConvEncoderConfig& c) {
  r.integer("input_size", c.input_size);
  r.integer("width", c.width);
  r.integer("out_dim", c.out_dim);
  r.finish();
}

void read(Reader r, PoseEncoderConfig& c) {
  r.integer("hidden", c.hidden);
  r.integer("out_dim", c.out_dim);
  r.boolean("normalize", c.normalize);
  r.finish();
}

void read(Reader r, VitConfig& c) {
  r.integer("height", c.height);
  r.integer("width", c.width);
  r.integer("patch", c.patch);
  r.integer("channels", c.channels);
  r.integer("embed_dim", c.embed_dim);
  r.integer("depth", c.depth);
  r.integer("heads", c.heads);
  r.integer("mlp_hidden", c.mlp_hidden);
  r.finish();
}

void read(Reader r, DepthEncoderConfig& c) {
  r.integer("input_size", c.input_size);
  r.array("channels", c.channels);
  r.integer("out_dim", c.out_dim);
  r.finish();
}

void read(Reader r, FusionConfig& c) {
  r.integer("stream_dim", c.stream_dim);
  r.integer("embrace_dim", c.embrace_dim);
  r.array("modality_probs", c.modality_probs);
  r.integer("fused_dim", c.fused_dim);
  r.integer("n_discrete", c.n_discrete);
  r.integer("n_continuous", c.n_continuous);
  r.boolean("deterministic_eval", c.deterministic_eval);
  std::string head;
  r.string("head", head);
  if (head == "sigmoid26") {
    c.head = DiscreteHead::Sigmoid26;
  } else if (head == "softmax4") {
    c.head = DiscreteHead::Softmax4;
  } else if (!head.empty()) {
    throw ConfigError(r.field("head") + " must be \"sigmoid26\" or \"softmax4\"");
  }
  r.finish();
}

void read(Reader r, ModelConfig& c) {
  if (auto s = r.object("face")) read(*s, c.face);
  if (auto s = r.object("body")) read(*s, c.body);
  if (auto s = r.object("scene")) read(*s, c.scene);
  if (auto s = r.object("pose")) read(*s, c.pose);
  if (auto s = r.object("vit")) read(*s, c.vit);
  if (auto s = r.object("depth")) read(*s, c.depth);
  if (auto s = r.object("fusion")) read(*s, c.fusion);
  r.finish();
}

void read(Reader r, LossWeights& c) {
  r.number("lambda_disc", c.lambda_disc);
  r.number("lambda_cont", c.lambda_cont);
  r.number("c", c.c);
  r.array("v", c.v);
  r.number("huber_delta", c.huber_delta);
  r.finish();
}

void read(Reader r, TrainConfig& c) {
  r.integer("batch_size", c.batch_size);
  r.integer("epochs", c.epochs);
  r.number("lr", c.lr);
  r.number("lr_decay_factor", c.lr_decay_factor);
  r.integer("lr_decay_every", c.lr_decay_every);
  std::string opt;
  r.string("optimizer", opt);
  if (opt == "adam") {
    c.optimizer = OptimizerKind::Adam;
  } else if (opt == "sgd_momentum") {
    c.optimizer = OptimizerKind::SgdMomentum;
  } else if (!opt.empty()) {
    throw ConfigError(r.field("optimizer") + " must be \"adam\" or \"sgd_momentum\"");
  }
  r.number("momentum", c.momentum);
  r.number("adam_beta1", c.adam_beta1);
  r.number("adam_beta2", c.adam_beta2);
  r.number("adam_eps", c.adam_eps);
  if (const json* fs = r.find("feature_set")) {
    if (!fs->is_array()) throw ConfigError(r.field("feature_set") + " must be an array of integers");
    c.feature_set.clear();
    for (const auto& e : *fs) {
      if (!e.is_number_integer()) throw ConfigError(r.field("feature_set") + " must be an array of integers");
      c.feature_set.insert(e.get<int>());
    }
  }
  r.finish();
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

void RunConfig::validate() const {
  if (dataset.n < 1) throw ConfigError("dataset.n must be at least 1");
  if (!(dataset.scene_signal >= 0.0 && dataset.scene_signal <= 1.0)) {
    throw ConfigError("dataset.scene_signal must lie in [0, 1]");
  }
  model.validate("model");
  losses.validate("losses");
  training.validate("training");
}

RunConfig parse_run_config(const json& doc, const fs::path& base_dir) {
  RunConfig cfg;
  Reader r(doc, "");
  r.seed("seed", cfg.seed);
  if (auto d = r.object("dataset")) {
    std::string dir;
    d->string("dir", dir);
    if (!dir.empty()) cfg.dataset.dir = dir;
    d->integer("n", cfg.dataset.n);
    d->number("scene_signal", cfg.dataset.scene_signal);
    d->finish();
  }
  cfg.dataset.dir = resolve(cfg.dataset.dir, base_dir);
  if (auto m = r.object("model")) read(*m, cfg.model);
  if (auto l = r.object("losses")) read(*l, cfg.losses);
  if (auto t = r.object("training")) read(*t, cfg.training);
  std::string out;
  r.string("output_dir", out);
  if (!out.empty()) cfg.output_dir = resolve(out, base_dir);
  r.finish();
  cfg.training.seed = cfg.seed;
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(doc, path.parent_path());
}

json to_json(const RunConfig& cfg) {
  const auto conv = [](const ConvEncoderConfig& c) {
    return ordered_json{{"input_size", c.input_size}, {"width", c.width}, {"out_dim", c.out_dim}};
  };
  const ModelConfig& m = cfg.model;
  ordered_json model = {
      {"face", conv(m.face)},
      {"body", conv(m.body)},
      {"scene", conv(m.scene)},
      {"pose", {{"hidden", m.pose.hidden}, {"out_dim", m.pose.out_dim}, {"normalize", m.pose.normalize}}},
      {"vit",
       {{"height", m.vit.height},
        {"width", m.vit.width},
        {"patch", m.vit.patch},
        {"channels", m.vit.channels},
        {"embed_dim", m.vit.embed_dim},
        {"depth", m.vit.depth},
        {"heads", m.vit.heads},
        {"mlp_hidden", m.vit.mlp_hidden}}},
      {"depth", {{"input_size", m.depth.input_size}, {"channels", m.depth.channels}, {"out_dim", m.depth.out_dim}}},
      {"fusion",
       {{"stream_dim", m.fusion.stream_dim},
        {"embrace_dim", m.fusion.embrace_dim},
        {"modality_probs", m.fusion.modality_probs},
        {"fused_dim", m.fusion.fused_dim},
        {"n_discrete", m.fusion.n_discrete},
        {"n_continuous", m.fusion.n_continuous},
        {"deterministic_eval", m.fusion.deterministic_eval},
        {"head", m.fusion.head == DiscreteHead::Softmax4 ? "softmax4" : "sigmoid26"}}}};
  const LossWeights& l = cfg.losses;
  const TrainConfig& t = cfg.training;
  ordered_json doc = {
      {"seed", cfg.seed},
      {"dataset", {{"dir", cfg.dataset.dir.string()}, {"n", cfg.dataset.n}, {"scene_signal", cfg.dataset.scene_signal}}},
      {"model", model},
      {"losses",
       {{"lambda_disc", l.lambda_disc},
        {"lambda_cont", l.lambda_cont},
        {"c", l.c},
        {"v", l.v},
        {"huber_delta", l.huber_delta}}},
      {"training",
       {{"batch_size", t.batch_size},
        {"epochs", t.epochs},
        {"lr", t.lr},
        {"lr_decay_factor", t.lr_decay_factor},
        {"lr_decay_every", t.lr_decay_every},
        {"optimizer", t.optimizer == OptimizerKind::Adam ? "adam" : "sgd_momentum"},
        {"momentum", t.momentum},
        {"adam_beta1", t.adam_beta1},
        {"adam_beta2", t.adam_beta2},
        {"adam_eps", t.adam_eps},
        {"feature_set", t.feature_set}}}};
  if (cfg.output_dir) doc["output_dir"] = cfg.output_dir->string();
  return json::parse(doc.dump());
}

fs::path resolve_output_dir(const std::optional<fs::path>& flag, const RunConfig& cfg) {
  if (flag) return *flag;
  if (cfg.output_dir) return *cfg.output_dir;
  if (const char* env = std::getenv("EMOFUSE_OUT"); env && *env) return env;
  return "out";
}

void ensure_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("output directory " + dir.string() + " cannot be created: " + ec.message());
  const fs::path probe = dir / ".emofuse_write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw ConfigError("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

}  // namespace emofuse
