#include "emofuse/encoders.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "emofuse/ops.hpp"

namespace emofuse {

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::Face: return "face";
    case Modality::BodyPose: return "body_pose";
    case Modality::Scene: return "scene";
    case Modality::Semantic: return "semantic";
    case Modality::Depth: return "depth";
  }
  return "?";
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  std::vector<Real> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = static_cast<Real>(rng.normal(0.0, stddev));
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor kaiming_normal(Shape shape, std::int64_t fan_in, Rng& rng) {
  return normal_init(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

Tensor stack_constant(const std::vector<Tensor>& items) {
  if (items.empty()) throw ShapeError("stack_constant: no items");
  const Shape& s = items.front().shape();
  Shape out{static_cast<std::int64_t>(items.size())};
  out.insert(out.end(), s.begin(), s.end());
  std::vector<Real> v;
  v.reserve(static_cast<std::size_t>(numel_of(out)));
  for (const auto& t : items) {
    if (t.shape() != s) throw ShapeError("stack_constant: mixed shapes " + shape_str(s) + " and " + shape_str(t.shape()));
    v.insert(v.end(), t.values().begin(), t.values().end());
  }
  return Tensor(std::move(out), std::move(v));
}

namespace {

Tensor zeros_param(Shape shape) { return Tensor(std::move(shape), true); }

Tensor ones_param(Shape shape) {
  return Tensor(shape, std::vector<Real>(static_cast<std::size_t>(numel_of(shape)), Real(1)), true);
}

Tensor ones(Shape shape) {
  return Tensor(shape, std::vector<Real>(static_cast<std::size_t>(numel_of(shape)), Real(1)));
}

void require_positive(int v, const std::string& path) {
  if (v < 1) throw ConfigError(path + " must be at least 1 (got " + std::to_string(v) + ")");
}

}  // namespace

// ---------------------------------------------------------------------------

void ConvEncoderConfig::validate(const std::string& path) const {
  require_positive(input_size, path + ".input_size");
  require_positive(width, path + ".width");
  require_positive(out_dim, path + ".out_dim");
}

ConvEncoder::ConvEncoder(const std::string& name, const ConvEncoderConfig& cfg, ParameterSet& params, Rng& init)
    : cfg_(cfg) {
  cfg.validate(name);
  const int w1 = cfg.width, w2 = 2 * cfg.width;
  auto make = [&](const std::string& tag, int out, int in) {
    Conv c;
    c.w = params.add(name + "." + tag + ".w", kaiming_normal({out, in, 3, 3}, in * 9, init));
    c.b = params.add(name + "." + tag + ".b", zeros_param({out}));
    return c;
  };
  stem_ = make("stem", w1, 3);
  res1a_ = make("res1a", w1, w1);
  res1b_ = make("res1b", w1, w1);
  down_ = make("down", w2, w1);
  res2a_ = make("res2a", w2, w2);
  res2b_ = make("res2b", w2, w2);
  proj_w_ = params.add(name + ".proj.w", kaiming_normal({w2, cfg.out_dim}, w2, init));
  proj_b_ = params.add(name + ".proj.b", zeros_param({cfg.out_dim}));
}

namespace {

// Per-channel standardization with the usual ImageNet statistics.
constexpr std::array<double, 3> kRgbMean = {0.485, 0.456, 0.406};
constexpr std::array<double, 3> kRgbStd = {0.229, 0.224, 0.225};

Tensor standardized_chw(const Image& image) {
  Tensor t = to_chw(image);
  if (image.channels != 3) return t;
  auto v = t.values();
  const std::size_t plane = static_cast<std::size_t>(image.height) * static_cast<std::size_t>(image.width);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t c = i / plane;
    v[i] = static_cast<Real>((v[i] - kRgbMean[c]) / kRgbStd[c]);
  }
  return t;
}

}  // namespace

Tensor ConvEncoder::prepare(const Image& image) const {
  if (image.channels != 3) throw ShapeError("conv_encode: expected 3 channels, got " + std::to_string(image.channels));
  return standardized_chw(resize_bilinear(image, cfg_.input_size, cfg_.input_size));
}

Tensor ConvEncoder::conv(const Conv& c, const Tensor& x, int stride) const {
  return ops::conv2d(x, c.w, c.b, stride, 1);
}

Tensor ConvEncoder::forward(const Tensor& x) const {
  using namespace ops;
  Tensor h = gelu(conv(stem_, x, 2));
  h = gelu(add(h, conv(res1b_, gelu(conv(res1a_, h, 1)), 1)));
  h = gelu(conv(down_, h, 2));
  h = gelu(add(h, conv(res2b_, gelu(conv(res2a_, h, 1)), 1)));
  const std::int64_t b = h.dim(0), c = h.dim(1);
  Tensor pooled = mean_axis(reshape(h, {b, c, h.dim(2) * h.dim(3)}), 2);
  return linear(pooled, proj_w_, proj_b_);
}

ModalityFeature ConvEncoder::encode(const std::optional<Image>& image, Modality kind) const {
  ModalityFeature f{kind, {}, false};
  if (!image) return f;
  Tensor y = forward(stack_constant({prepare(*image)}));
  f.vector = ops::reshape(y, {cfg_.out_dim});
  f.present = true;
  return f;
}

// ---------------------------------------------------------------------------

void PoseEncoderConfig::validate(const std::string& path) const {
  require_positive(hidden, path + ".hidden");
  require_positive(out_dim, path + ".out_dim");
}

const std::vector<std::pair<int, int>>& skeleton_edges() {
  // nose-neck, arms, legs, and the face ring.
  static const std::vector<std::pair<int, int>> edges = {
      {0, 1},  {1, 2},  {2, 3},   {3, 4},   {1, 5},   {5, 6},  {6, 7},  {1, 8},  {8, 9},
      {9, 10}, {1, 11}, {11, 12}, {12, 13}, {0, 14},  {0, 15}, {14, 16}, {15, 17}};
  return edges;
}

std::array<Real, kNumJoints * kNumJoints> PoseEncoder::normalized_adjacency(
    const std::array<bool, kNumJoints>& mask) {
  std::array<double, kNumJoints * kNumJoints> a{};
  for (int j = 0; j < kNumJoints; ++j)
    if (mask[j]) a[j * kNumJoints + j] = 1.0;
  for (auto [i, j] : skeleton_edges()) {
    if (mask[i] && mask[j]) a[i * kNumJoints + j] = a[j * kNumJoints + i] = 1.0;
  }
  std::array<double, kNumJoints> inv_sqrt_deg{};
  for (int i = 0; i < kNumJoints; ++i) {
    double d = 0.0;
    for (int j = 0; j < kNumJoints; ++j) d += a[i * kNumJoints + j];
    inv_sqrt_deg[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  std::array<Real, kNumJoints * kNumJoints> out{};
  for (int i = 0; i < kNumJoints; ++i)
    for (int j = 0; j < kNumJoints; ++j)
      out[i * kNumJoints + j] = static_cast<Real>(inv_sqrt_deg[i] * a[i * kNumJoints + j] * inv_sqrt_deg[j]);
  return out;
}

PoseEncoder::PoseEncoder(const std::string& name, const PoseEncoderConfig& cfg, ParameterSet& params, Rng& init)
    : cfg_(cfg) {
  cfg.validate(name);
  w1_ = params.add(name + ".gc1.w", kaiming_normal({3, cfg.hidden}, 3, init));
  b1_ = params.add(name + ".gc1.b", zeros_param({cfg.hidden}));
  w2_ = params.add(name + ".gc2.w", kaiming_normal({cfg.hidden, cfg.out_dim}, cfg.hidden, init));
  b2_ = params.add(name + ".gc2.b", zeros_param({cfg.out_dim}));
  proj_w_ = params.add(name + ".proj.w", kaiming_normal({cfg.out_dim, cfg.out_dim}, cfg.out_dim, init));
  proj_b_ = params.add(name + ".proj.b", zeros_param({cfg.out_dim}));
}

std::optional<PreparedPose> PoseEncoder::prepare(const Pose& pose) const {
  PreparedPose p;
  int count = 0;
  double mx = 0.0, my = 0.0;
  for (int j = 0; j < kNumJoints; ++j) {
    p.mask[j] = !pose[j].missing();
    if (p.mask[j]) {
      ++count;
      mx += pose[j].x;
      my += pose[j].y;
    }
  }
  if (count == 0) return std::nullopt;

  double rx = 0.0, ry = 0.0, scale = 1.0;
  if (cfg_.normalize) {
    constexpr int kNeck = 1, kRightHip = 8, kLeftHip = 11;
    if (p.mask[kNeck]) {
      rx = pose[kNeck].x;
      ry = pose[kNeck].y;
    } else {
      rx = mx / count;
      ry = my / count;
    }
    double torso = 0.0;
    int hips = 0;
    double hx = 0.0, hy = 0.0;
    for (int j : {kRightHip, kLeftHip}) {
      if (p.mask[j]) {
        ++hips;
        hx += pose[j].x;
        hy += pose[j].y;
      }
    }
    if (p.mask[kNeck] && hips > 0) torso = std::hypot(hx / hips - rx, hy / hips - ry);
    if (torso < 1e-6) {
      // No usable torso: fall back to the spread of the detected joints.
      for (int j = 0; j < kNumJoints; ++j)
        if (p.mask[j]) torso = std::max(torso, std::hypot(pose[j].x - rx, pose[j].y - ry));
    }
    scale = torso > 1e-6 ? torso : 1.0;
  }
  for (int j = 0; j < kNumJoints; ++j) {
    if (!p.mask[j]) continue;
    p.features[j * 3 + 0] = static_cast<Real>((pose[j].x - rx) / scale);
    p.features[j * 3 + 1] = static_cast<Real>((pose[j].y - ry) / scale);
    p.features[j * 3 + 2] = Real(1);
  }
  return p;
}

Tensor PoseEncoder::forward(const std::vector<const PreparedPose*>& poses) const {
  using namespace ops;
  const auto b = static_cast<std::int64_t>(poses.size());
  if (b == 0) throw ShapeError("pose_encode: empty batch");
  constexpr std::int64_t J = kNumJoints;
  std::vector<Real> x, adj, pool;
  x.reserve(b * J * 3);
  adj.reserve(b * J * J);
  pool.reserve(b * J);
  for (const auto* p : poses) {
    x.insert(x.end(), p->features.begin(), p->features.end());
    const auto a = normalized_adjacency(p->mask);
    adj.insert(adj.end(), a.begin(), a.end());
    const auto n = std::count(p->mask.begin(), p->mask.end(), true);
    for (bool m : p->mask) pool.push_back(m ? Real(1) / static_cast<Real>(n) : Real(0));
  }
  const Tensor X({b, J, 3}, std::move(x));
  const Tensor A({b, J, J}, std::move(adj));
  const Tensor P({b, 1, J}, std::move(pool));
  Tensor h = gelu(linear(bmm(A, X), w1_, b1_));
  h = gelu(linear(bmm(A, h), w2_, b2_));
  Tensor pooled = reshape(bmm(P, h), {b, cfg_.out_dim});
  return linear(pooled, proj_w_, proj_b_);
}

ModalityFeature PoseEncoder::encode(const std::optional<Pose>& pose) const {
  ModalityFeature f{Modality::BodyPose, {}, false};
  if (!pose) return f;
  const auto prepared = prepare(*pose);
  if (!prepared) return f;
  f.vector = ops::reshape(forward({&*prepared}), {cfg_.out_dim});
  f.present = true;
  return f;
}

// ---------------------------------------------------------------------------

void VitConfig::validate(const std::string& path) const {
  for (auto [v, field] : {std::pair{height, "height"}, {width, "width"}, {patch, "patch"}, {channels, "channels"},
                          {embed_dim, "embed_dim"}, {depth, "depth"}, {heads, "heads"}, {mlp_hidden, "mlp_hidden"}}) {
    require_positive(v, path + "." + field);
  }
  if (height % patch != 0 || width % patch != 0) {
    throw ConfigError(path + ": image size " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by patch size " + std::to_string(patch));
  }
  if (embed_dim % heads != 0) {
    throw ConfigError(path + ": embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " +
                      std::to_string(heads));
  }
}

VitEncoder::VitEncoder(const std::string& name, const VitConfig& cfg, ParameterSet& params, Rng& init) : cfg_(cfg) {
  cfg.validate(name);
  const int d = cfg.embed_dim, pd = cfg.patch * cfg.patch * cfg.channels;
  embed_w_ = params.add(name + ".embed.w", kaiming_normal({pd, d}, pd, init));
  embed_b_ = params.add(name + ".embed.b", zeros_param({d}));
  cls_ = params.add(name + ".cls", normal_init({1, d}, 0.02, init));
  pos_ = params.add(name + ".pos", normal_init({cfg.tokens(), d}, 0.02, init));
  for (int l = 0; l < cfg.depth; ++l) {
    const std::string p = name + ".block" + std::to_string(l) + ".";
    Block b;
    b.ln1_g = params.add(p + "ln1.g", ones_param({d}));
    b.ln1_b = params.add(p + "ln1.b", zeros_param({d}));
    b.qkv_w = params.add(p + "qkv.w", kaiming_normal({d, 3 * d}, d, init));
    b.qkv_b = params.add(p + "qkv.b", zeros_param({3 * d}));
    b.out_w = params.add(p + "out.w", kaiming_normal({d, d}, d, init));
    b.out_b = params.add(p + "out.b", zeros_param({d}));
    b.ln2_g = params.add(p + "ln2.g", ones_param({d}));
    b.ln2_b = params.add(p + "ln2.b", zeros_param({d}));
    b.fc1_w = params.add(p + "fc1.w", kaiming_normal({d, cfg.mlp_hidden}, d, init));
    b.fc1_b = params.add(p + "fc1.b", zeros_param({cfg.mlp_hidden}));
    b.fc2_w = params.add(p + "fc2.w", kaiming_normal({cfg.mlp_hidden, d}, cfg.mlp_hidden, init));
    b.fc2_b = params.add(p + "fc2.b", zeros_param({d}));
    blocks_.push_back(std::move(b));
  }
  ln_g_ = params.add(name + ".ln.g", ones_param({d}));
  ln_b_ = params.add(name + ".ln.b", zeros_param({d}));
}

Tensor VitEncoder::prepare(const Image& image) const {
  if (image.channels != cfg_.channels) {
    throw ShapeError("vit_encode: expected " + std::to_string(cfg_.channels) + " channels, got " +
                     std::to_string(image.channels));
  }
  return standardized_chw(resize_bilinear(image, cfg_.height, cfg_.width));
}

Tensor VitEncoder::patchify(const Tensor& x) const {
  const std::int64_t b = x.dim(0), c = cfg_.channels, p = cfg_.patch;
  if (x.rank() != 4 || x.dim(1) != c || x.dim(2) != cfg_.height || x.dim(3) != cfg_.width) {
    throw ShapeError("vit_encode: input " + shape_str(x.shape()) + " does not match the configured image");
  }
  const std::int64_t gh = cfg_.height / p, gw = cfg_.width / p;
  Tensor t = ops::reshape(x, {b, c, gh, p, gw, p});
  t = ops::permute(t, {0, 2, 4, 3, 5, 1});
  return ops::reshape(t, {b, gh * gw, p * p * c});
}

Tensor VitEncoder::attention(const Block& blk, const Tensor& z, std::vector<Real>* weights) const {
  using namespace ops;
  const std::int64_t b = z.dim(0), t = z.dim(1), d = cfg_.embed_dim, h = cfg_.heads, dh = d / h;
  auto parts = split(linear(z, blk.qkv_w, blk.qkv_b), 2, {d, d, d});
  for (auto& part : parts) part = reshape(permute(reshape(part, {b, t, h, dh}), {0, 2, 1, 3}), {b * h, t, dh});
  const Tensor scores = scale(bmm(parts[0], permute(parts[1], {0, 2, 1})), static_cast<Real>(1.0 / std::sqrt(double(dh))));
  const Tensor a = softmax(scores);
  if (weights) weights->assign(a.values().begin(), a.values().end());
  Tensor o = reshape(permute(reshape(bmm(a, parts[2]), {b, h, t, dh}), {0, 2, 1, 3}), {b, t, d});
  return linear(o, blk.out_w, blk.out_b);
}

Tensor VitEncoder::encode_tokens(const Tensor& x, std::vector<AttentionMaps>* attention_out) const {
  using namespace ops;
  const std::int64_t b = x.dim(0), d = cfg_.embed_dim, t = cfg_.tokens();
  Tensor e = linear(patchify(x), embed_w_, embed_b_);
  Tensor cls = matmul(ones({b, 1, 1}), cls_);
  Tensor z = concat({cls, e}, 1);
  z = add(z, reshape(matmul(ones({b, 1}), reshape(pos_, {1, t * d})), {b, t, d}));

  std::vector<std::vector<Real>> per_layer(blocks_.size());
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& blk = blocks_[l];
    z = add(z, attention(blk, layernorm(z, blk.ln1_g, blk.ln1_b), attention_out ? &per_layer[l] : nullptr));
    Tensor m = linear(gelu(linear(layernorm(z, blk.ln2_g, blk.ln2_b), blk.fc1_w, blk.fc1_b)), blk.fc2_w, blk.fc2_b);
    z = add(z, m);
  }

  if (attention_out) {
    const std::size_t per_map = static_cast<std::size_t>(cfg_.heads) * t * t;
    for (std::int64_t s = 0; s < b; ++s) {
      AttentionMaps maps{cfg_.depth, cfg_.heads, static_cast<int>(t), {}};
      maps.values.reserve(per_map * blocks_.size());
      for (const auto& layer : per_layer) {
        auto first = layer.begin() + static_cast<std::ptrdiff_t>(s * per_map);
        maps.values.insert(maps.values.end(), first, first + static_cast<std::ptrdiff_t>(per_map));
      }
      attention_out->push_back(std::move(maps));
    }
  }
  return z;
}

Tensor VitEncoder::readout(const Tensor& tokens) const {
  const std::int64_t b = tokens.dim(0);
  Tensor cls = ops::reshape(ops::slice(tokens, 1, 0, 1), {b, cfg_.embed_dim});
  return ops::layernorm(cls, ln_g_, ln_b_);
}

Tensor VitEncoder::forward(const Tensor& x, std::vector<AttentionMaps>* attention) const {
  return readout(encode_tokens(x, attention));
}

std::pair<ModalityFeature, std::optional<AttentionMaps>> VitEncoder::encode(const std::optional<Image>& image) const {
  ModalityFeature f{Modality::Semantic, {}, false};
  if (!image) return {f, std::nullopt};
  std::vector<AttentionMaps> maps;
  f.vector = ops::reshape(forward(stack_constant({prepare(*image)}), &maps), {cfg_.embed_dim});
  f.present = true;
  return {f, std::move(maps.front())};
}

// ---------------------------------------------------------------------------

void DepthEncoderConfig::validate(const std::string& path) const {
  require_positive(input_size, path + ".input_size");
  for (std::size_t i = 0; i < channels.size(); ++i) require_positive(channels[i], path + ".channels[" + std::to_string(i) + "]");
  require_positive(out_dim, path + ".out_dim");
}

std::array<int, 5> DepthEncoderConfig::spatial_sizes() const {
  std::array<int, 5> s{};
  int n = input_size;
  for (auto& v : s) v = n = (n - 1) / 2 + 1;  // 3x3, stride 2, padding 1
  return s;
}

DepthEncoder::DepthEncoder(const std::string& name, const DepthEncoderConfig& cfg, ParameterSet& params, Rng& init)
    : cfg_(cfg) {
  cfg.validate(name);
  int in = 1;
  for (std::size_t i = 0; i < 5; ++i) {
    const int out = cfg.channels[i];
    const std::string p = name + ".conv" + std::to_string(i);
    w_[i] = params.add(p + ".w", kaiming_normal({out, in, 3, 3}, in * 9, init));
    b_[i] = params.add(p + ".b", zeros_param({out}));
    in = out;
  }
  const int side = cfg.spatial_sizes().back();
  const int flat = in * side * side;
  proj_w_ = params.add(name + ".proj.w", kaiming_normal({flat, cfg.out_dim}, flat, init));
  proj_b_ = params.add(name + ".proj.b", zeros_param({cfg.out_dim}));
}

Tensor DepthEncoder::prepare(const Image& depth) const {
  if (depth.channels != 1) throw ShapeError("depth_features: expected 1 channel, got " + std::to_string(depth.channels));
  Tensor t = to_chw(resize_bilinear(depth, cfg_.input_size, cfg_.input_size));
  for (auto& v : t.values()) v = static_cast<Real>((v - 0.5) / 0.25);
  return t;
}

Tensor DepthEncoder::forward(const Tensor& x, std::vector<Shape>* trace) const {
  Tensor h = x;
  for (std::size_t i = 0; i < 5; ++i) {
    h = ops::gelu(ops::conv2d(h, w_[i], b_[i], 2, 1));
    if (trace) trace->push_back(h.shape());
  }
  const std::int64_t b = h.dim(0);
  return ops::linear(ops::reshape(h, {b, h.numel() / b}), proj_w_, proj_b_);
}

ModalityFeature DepthEncoder::encode(const std::optional<Image>& depth) const {
  ModalityFeature f{Modality::Depth, {}, false};
  if (!depth) return f;
  f.vector = ops::reshape(forward(stack_constant({prepare(*depth)})), {cfg_.out_dim});
  f.present = true;
  return f;
}

}  // namespace emofuse
