#include "emofuse/fusion.hpp"

#include <cmath>

#include "emofuse/ops.hpp"

namespace emofuse {

void FusionConfig::validate(const std::string& path) const {
  for (auto [v, field] : {std::pair{stream_dim, "stream_dim"}, {embrace_dim, "embrace_dim"}, {fused_dim, "fused_dim"},
                          {n_discrete, "n_discrete"}, {n_continuous, "n_continuous"}}) {
    if (v < 1) throw ConfigError(path + "." + field + " must be at least 1 (got " + std::to_string(v) + ")");
  }
  if (n_discrete != static_cast<int>(kNumDiscrete) || n_continuous != static_cast<int>(kNumContinuous)) {
    throw ConfigError(path + ": the label layout is fixed at 26 discrete and 3 continuous outputs");
  }
  for (double p : modality_probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError(path + ".modality_probs must be nonnegative");
  }
  if (std::abs(modality_probs[0] + modality_probs[1] - 1.0) > 1e-6) {
    throw ConfigError(path + ".modality_probs must sum to 1");
  }
}

StreamBatch to_stream(const ModalityFeature& f) {
  StreamBatch s;
  s.batch = 1;
  if (f.present) {
    s.features = ops::reshape(f.vector, {1, f.vector.numel()});
    s.rows = {0};
  }
  return s;
}

namespace {

Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

// [B, D] with every row equal to v ([D]).
Tensor broadcast_rows(const Tensor& v, std::int64_t b) {
  return ops::merge_rows(zeros({0, v.dim(0)}), {}, v, b);
}

}  // namespace

Embrace::Embrace(const std::string& name, const FusionConfig& cfg, ParameterSet& params, Rng& init) : cfg_(cfg) {
  cfg.validate("model.fusion");
  const char* tags[2] = {"body", "pose"};
  for (int m = 0; m < 2; ++m) {
    const std::string p = name + ".dock_" + tags[m];
    w_[m] = params.add(p + ".w", kaiming_normal({cfg.stream_dim, cfg.embrace_dim}, cfg.stream_dim, init));
    b_[m] = params.add(p + ".b", Tensor(Shape{cfg.embrace_dim}, true));
  }
}

Tensor Embrace::dock(int modality, const Tensor& features) const {
  return ops::relu(ops::linear(features, w_[modality], b_[modality]));
}

StreamBatch Embrace::forward(const StreamBatch& body, const StreamBatch& pose, bool training, Rng& rng,
                             EmbraceState* state) const {
  if (body.batch != pose.batch) throw ShapeError("embrace: body and pose batches differ");
  const std::int64_t b = body.batch, de = cfg_.embrace_dim;
  const StreamBatch* inputs[2] = {&body, &pose};

  std::vector<std::array<bool, 2>> has(static_cast<std::size_t>(b), {false, false});
  for (int m = 0; m < 2; ++m)
    for (auto r : inputs[m]->rows) has[r][m] = true;

  const bool stochastic = training || !cfg_.deterministic_eval;
  std::array<std::vector<Real>, 2> coef;
  for (auto& c : coef) c.assign(static_cast<std::size_t>(b * de), Real(0));
  if (state) state->selection.assign(static_cast<std::size_t>(b), std::vector<int>(static_cast<std::size_t>(de), -1));

  StreamBatch out;
  out.batch = b;
  for (std::int64_t r = 0; r < b; ++r) {
    const auto [hb, hp] = has[r];
    if (!hb && !hp) continue;
    out.rows.push_back(r);
    double pb = hb ? cfg_.modality_probs[0] : 0.0;
    double pp = hp ? cfg_.modality_probs[1] : 0.0;
    if (pb + pp <= 0.0) {
      // Only zero-probability modalities are present; fall back to uniform.
      pb = hb;
      pp = hp;
    }
    const double total = pb + pp;
    pb /= total;
    pp /= total;
    for (std::int64_t j = 0; j < de; ++j) {
      const std::size_t k = static_cast<std::size_t>(r * de + j);
      if (hb != hp) {
        coef[hb ? 0 : 1][k] = Real(1);
        if (state && stochastic) state->selection[r][j] = hb ? 0 : 1;
      } else if (stochastic) {
        const int m = rng.uniform() < pb ? 0 : 1;
        coef[m][k] = Real(1);
        if (state) state->selection[r][j] = m;
      } else {
        coef[0][k] = static_cast<Real>(pb);
        coef[1][k] = static_cast<Real>(pp);
      }
    }
  }
  if (out.rows.empty()) return out;

  Tensor e;
  for (int m = 0; m < 2; ++m) {
    if (inputs[m]->empty()) continue;
    Tensor full = ops::merge_rows(dock(m, inputs[m]->features), inputs[m]->rows, zeros({de}), b);
    Tensor term = ops::mul(full, Tensor({b, de}, std::move(coef[m])));
    e = e.defined() ? ops::add(e, term) : term;
  }
  out.features = ops::gather_rows(e, out.rows);
  return out;
}

ModalityFeature Embrace::embrace(const ModalityFeature& body, const ModalityFeature& pose, bool training, Rng& rng,
                                 EmbraceState* state) const {
  StreamBatch s = forward(to_stream(body), to_stream(pose), training, rng, state);
  ModalityFeature f{Modality::BodyPose, {}, false};
  if (s.empty()) return f;
  f.vector = ops::reshape(s.features, {cfg_.embrace_dim});
  f.present = true;
  return f;
}

// ---------------------------------------------------------------------------

Fusion::Fusion(const std::string& name, const FusionConfig& cfg, ParameterSet& params, Rng& init) : cfg_(cfg) {
  cfg.validate("model.fusion");
  for (int m = 0; m < kNumStreams; ++m) {
    absent_[m] = params.add(name + ".absent." + std::string(modality_name(static_cast<Modality>(m))),
                            normal_init({cfg.stream_dim}, 0.02, init));
  }
  const int in = kNumStreams * cfg.stream_dim;
  proj_w_ = params.add(name + ".proj.w", kaiming_normal({in, cfg.fused_dim}, in, init));
  proj_b_ = params.add(name + ".proj.b", Tensor(Shape{cfg.fused_dim}, true));
}

Tensor Fusion::concat(const std::array<StreamBatch, kNumStreams>& streams) const {
  const std::int64_t b = streams[0].batch, d = cfg_.stream_dim;
  std::vector<bool> any(static_cast<std::size_t>(b), false);
  std::vector<Tensor> parts;
  for (int m = 0; m < kNumStreams; ++m) {
    const StreamBatch& s = streams[m];
    if (s.batch != b) throw ShapeError("fuse_concat: streams disagree on batch size");
    for (auto r : s.rows) any[r] = true;
    if (s.empty()) {
      parts.push_back(broadcast_rows(absent_[m], b));
    } else {
      if (s.features.dim(1) != d) {
        throw ShapeError("fuse_concat: stream '" + std::string(modality_name(static_cast<Modality>(m))) +
                         "' has width " + std::to_string(s.features.dim(1)) + ", expected " + std::to_string(d));
      }
      parts.push_back(ops::merge_rows(s.features, s.rows, absent_[m], b));
    }
  }
  for (std::int64_t r = 0; r < b; ++r) {
    if (!any[r]) throw std::invalid_argument("fuse_concat: no modality available for batch row " + std::to_string(r));
  }
  return ops::concat(parts, 1);
}

Tensor Fusion::forward(const std::array<StreamBatch, kNumStreams>& streams) const {
  return ops::linear(concat(streams), proj_w_, proj_b_);
}

Tensor Fusion::fuse_concat(const std::array<ModalityFeature, kNumStreams>& bundle) const {
  std::array<StreamBatch, kNumStreams> streams;
  for (int m = 0; m < kNumStreams; ++m) streams[m] = to_stream(bundle[m]);
  return ops::reshape(forward(streams), {cfg_.fused_dim});
}

// ---------------------------------------------------------------------------

Heads::Heads(const std::string& name, const FusionConfig& cfg, ParameterSet& params, Rng& init) : cfg_(cfg) {
  const int k = cfg.discrete_outputs();
  disc_w_ = params.add(name + ".disc.w", normal_init({cfg.fused_dim, k}, 0.01, init));
  disc_b_ = params.add(name + ".disc.b", Tensor(Shape{k}, true));
  cont_w_ = params.add(name + ".cont.w", normal_init({cfg.fused_dim, cfg.n_continuous}, 0.01, init));
  cont_b_ = params.add(name + ".cont.b", Tensor(Shape{cfg.n_continuous}, true));
}

HeadOutput Heads::forward(const Tensor& fused) const {
  if (fused.shape().back() != cfg_.fused_dim) {
    throw ShapeError("predict_heads: input " + shape_str(fused.shape()) + " does not end in " +
                     std::to_string(cfg_.fused_dim));
  }
  Tensor logits = ops::linear(fused, disc_w_, disc_b_);
  HeadOutput out;
  out.disc = cfg_.head == DiscreteHead::Softmax4 ? ops::softmax(logits) : ops::sigmoid(logits);
  out.cont = ops::sigmoid(ops::linear(fused, cont_w_, cont_b_));
  return out;
}

}  // namespace emofuse
