#include "emofuse/model.hpp"

#include <algorithm>
#include <functional>

#include "emofuse/ops.hpp"

namespace emofuse {

void ModelConfig::validate(const std::string& path) const {
  face.validate(path + ".face");
  body.validate(path + ".body");
  scene.validate(path + ".scene");
  pose.validate(path + ".pose");
  vit.validate(path + ".vit");
  depth.validate(path + ".depth");
  fusion.validate(path + ".fusion");
  const int d = fusion.stream_dim;
  for (auto [v, field] : {std::pair{face.out_dim, "face.out_dim"}, {body.out_dim, "body.out_dim"},
                          {scene.out_dim, "scene.out_dim"}, {pose.out_dim, "pose.out_dim"},
                          {vit.embed_dim, "vit.embed_dim"}, {depth.out_dim, "depth.out_dim"},
                          {fusion.embrace_dim, "fusion.embrace_dim"}}) {
    if (v != d) {
      throw ConfigError(path + "." + field + " (" + std::to_string(v) + ") must equal " + path +
                        ".fusion.stream_dim (" + std::to_string(d) + ")");
    }
  }
  if (vit.channels != 3) throw ConfigError(path + ".vit.channels must be 3 for RGB context images");
}

void validate_feature_set(const FeatureSet& fs, const std::string& path) {
  if (fs.empty()) throw ConfigError(path + " must not be empty");
  for (int f : fs) {
    if (f < 1 || f > 3) throw ConfigError(path + " may only contain 1, 2 and 3 (got " + std::to_string(f) + ")");
  }
}

std::string feature_set_label(const FeatureSet& fs) {
  std::string s = "{";
  for (int f : fs) {
    if (s.size() > 1) s += ",";
    s += std::to_string(f);
  }
  return s + "}";
}

bool slot_enabled(InputSlot slot, const FeatureSet& fs) {
  switch (slot) {
    case InputSlot::Face:
    case InputSlot::Body:
    case InputSlot::Pose: return fs.count(1) > 0;
    case InputSlot::Scene:
    case InputSlot::Semantic: return fs.count(2) > 0;
    case InputSlot::Depth: return fs.count(3) > 0;
  }
  return false;
}

Model::Model(const ModelConfig& cfg, std::uint64_t init_seed)
    : cfg_((cfg.validate(), cfg)),
      init_(init_seed),
      face_("face", cfg.face, params_, init_),
      body_("body", cfg.body, params_, init_),
      scene_("scene", cfg.scene, params_, init_),
      pose_("pose", cfg.pose, params_, init_),
      vit_("semantic", cfg.vit, params_, init_),
      depth_("depth", cfg.depth, params_, init_),
      embrace_("embrace", cfg.fusion, params_, init_),
      fusion_("fusion", cfg.fusion, params_, init_),
      heads_("heads", cfg.fusion, params_, init_) {}

void Model::reset_input_reads() const {
  for (auto& r : reads_) r.store(0);
}

PreparedSample Model::prepare(const Sample& sample, const FeatureSet& fs) const {
  PreparedSample p;
  p.id = sample.id;
  p.annotation = sample.annotation;

  auto enabled = [&](InputSlot s) { return slot_enabled(s, fs); };
  for (int k = 0; k < kNumInputSlots; ++k) {
    const auto slot = static_cast<InputSlot>(k);
    if (!enabled(slot)) continue;
    auto it = sample.precomputed.find(std::string(kModalityKeys[k]));
    if (it == sample.precomputed.end()) continue;
    count(slot);
    if (static_cast<int>(it->second.size()) != cfg_.fusion.stream_dim) {
      throw ValidationError("sample '" + sample.id + "': precomputed '" + it->first + "' has length " +
                            std::to_string(it->second.size()) + ", expected " +
                            std::to_string(cfg_.fusion.stream_dim));
    }
    p.precomputed[k] = Tensor({cfg_.fusion.stream_dim}, std::vector<Real>(it->second.begin(), it->second.end()));
  }
  auto needs = [&](InputSlot s) { return enabled(s) && !p.precomputed[static_cast<std::size_t>(s)]; };

  if (needs(InputSlot::Face) || needs(InputSlot::Body)) {
    const auto [face, body] = crop_regions(sample);
    if (needs(InputSlot::Face) && face) {
      count(InputSlot::Face);
      p.face = face_.prepare(*face);
    }
    if (needs(InputSlot::Body) && body) {
      count(InputSlot::Body);
      p.body = body_.prepare(*body);
    }
  }
  if (needs(InputSlot::Pose) && sample.pose) {
    count(InputSlot::Pose);
    p.pose = pose_.prepare(*sample.pose);
  }
  if (needs(InputSlot::Scene) || needs(InputSlot::Semantic)) {
    if (const auto context = context_image(sample)) {
      if (needs(InputSlot::Scene)) {
        count(InputSlot::Scene);
        p.scene = scene_.prepare(*context);
      }
      if (needs(InputSlot::Semantic)) {
        count(InputSlot::Semantic);
        p.semantic = vit_.prepare(*context);
      }
    }
  }
  if (needs(InputSlot::Depth) && sample.depth) {
    count(InputSlot::Depth);
    p.depth = depth_.prepare(*sample.depth);
  }
  return p;
}

std::vector<PreparedSample> Model::prepare_all(const std::vector<Sample>& samples, const FeatureSet& fs) const {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(prepare(s, fs));
  return out;
}

namespace {

// Batch rows of one input slot, split by source.
template <class T>
struct Collected {
  std::vector<std::int64_t> enc_rows, pre_rows;
  std::vector<const T*> inputs;
  std::vector<Tensor> pre;
};

// Encoder rows first, then precomputed rows.
StreamBatch assemble(std::int64_t b, std::vector<std::int64_t> enc_rows, const Tensor& enc_out,
                     const std::vector<std::int64_t>& pre_rows, const std::vector<Tensor>& pre) {
  StreamBatch s;
  s.batch = b;
  s.rows = std::move(enc_rows);
  s.features = enc_out;
  if (!pre.empty()) {
    const Tensor stacked = stack_constant(pre);
    s.features = s.features.defined() ? ops::concat({s.features, stacked}, 0) : stacked;
    s.rows.insert(s.rows.end(), pre_rows.begin(), pre_rows.end());
  }
  return s;
}

std::vector<Tensor> deref(const std::vector<const Tensor*>& v) {
  std::vector<Tensor> out;
  out.reserve(v.size());
  for (const auto* t : v) out.push_back(*t);
  return out;
}

}  // namespace

template <class T>
static Collected<T> collect(std::span<const PreparedSample* const> batch, InputSlot slot,
                            std::optional<T> PreparedSample::*field, const std::function<void(InputSlot)>& count) {
  const auto k = static_cast<std::size_t>(slot);
  Collected<T> c;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const PreparedSample& s = *batch[r];
    if (s.precomputed[k]) {
      count(slot);
      c.pre_rows.push_back(static_cast<std::int64_t>(r));
      c.pre.push_back(*s.precomputed[k]);
    } else if (s.*field) {
      count(slot);
      c.enc_rows.push_back(static_cast<std::int64_t>(r));
      c.inputs.push_back(&*(s.*field));
    }
  }
  return c;
}

StreamBatch Model::conv_stream(std::span<const PreparedSample* const> batch, InputSlot slot,
                               std::optional<Tensor> PreparedSample::*field, const ConvEncoder& enc) const {
  auto c = collect(batch, slot, field, [this](InputSlot s) { count(s); });
  Tensor out = c.inputs.empty() ? Tensor() : enc.forward(stack_constant(deref(c.inputs)));
  return assemble(static_cast<std::int64_t>(batch.size()), std::move(c.enc_rows), out, c.pre_rows, c.pre);
}

ForwardResult Model::forward(std::span<const PreparedSample* const> batch, bool training, Rng& embrace_rng,
                             bool want_attention, EmbraceState* embrace_state) const {
  const auto b = static_cast<std::int64_t>(batch.size());
  if (b == 0) throw ShapeError("model: empty batch");
  const auto counter = [this](InputSlot s) { count(s); };
  ForwardResult res;

  const StreamBatch face = conv_stream(batch, InputSlot::Face, &PreparedSample::face, face_);
  const StreamBatch body = conv_stream(batch, InputSlot::Body, &PreparedSample::body, body_);
  const StreamBatch scene = conv_stream(batch, InputSlot::Scene, &PreparedSample::scene, scene_);

  auto pc = collect(batch, InputSlot::Pose, &PreparedSample::pose, counter);
  Tensor pose_out = pc.inputs.empty() ? Tensor() : pose_.forward(pc.inputs);
  const StreamBatch pose = assemble(b, std::move(pc.enc_rows), pose_out, pc.pre_rows, pc.pre);

  res.attention.assign(static_cast<std::size_t>(b), std::nullopt);
  auto sc = collect(batch, InputSlot::Semantic, &PreparedSample::semantic, counter);
  Tensor sem_out;
  if (!sc.inputs.empty()) {
    std::vector<AttentionMaps> maps;
    sem_out = vit_.forward(stack_constant(deref(sc.inputs)), want_attention ? &maps : nullptr);
    for (std::size_t i = 0; i < maps.size(); ++i) res.attention[sc.enc_rows[i]] = std::move(maps[i]);
  }
  const StreamBatch semantic = assemble(b, std::move(sc.enc_rows), sem_out, sc.pre_rows, sc.pre);

  auto dc = collect(batch, InputSlot::Depth, &PreparedSample::depth, counter);
  Tensor depth_out = dc.inputs.empty() ? Tensor() : depth_.forward(stack_constant(deref(dc.inputs)));
  const StreamBatch depth = assemble(b, std::move(dc.enc_rows), depth_out, dc.pre_rows, dc.pre);

  const StreamBatch f7 = embrace_.forward(body, pose, training, embrace_rng, embrace_state);
  res.streams = {face, f7, scene, semantic, depth};
  res.fused = fusion_.forward(res.streams);
  res.heads = heads_.forward(res.fused);
  return res;
}

std::vector<std::size_t> head_categories(DiscreteHead head) {
  std::vector<std::size_t> idx;
  if (head == DiscreteHead::Softmax4) {
    for (auto name : kBasicFour) idx.push_back(*category_index(name));
  } else {
    for (std::size_t i = 0; i < kNumDiscrete; ++i) idx.push_back(i);
  }
  return idx;
}

Tensor discrete_targets(std::span<const PreparedSample* const> batch, DiscreteHead head) {
  const auto idx = head_categories(head);
  std::vector<Real> v;
  v.reserve(batch.size() * idx.size());
  for (const auto* s : batch)
    for (auto i : idx) v.push_back(static_cast<Real>(s->annotation.disc[i]));
  return Tensor({static_cast<std::int64_t>(batch.size()), static_cast<std::int64_t>(idx.size())}, std::move(v));
}

Tensor continuous_targets(std::span<const PreparedSample* const> batch) {
  std::vector<Real> v;
  v.reserve(batch.size() * kNumContinuous);
  for (const auto* s : batch)
    for (float c : s->annotation.cont) v.push_back(static_cast<Real>(c));
  return Tensor({static_cast<std::int64_t>(batch.size()), static_cast<std::int64_t>(kNumContinuous)}, std::move(v));
}

}  // namespace emofuse
