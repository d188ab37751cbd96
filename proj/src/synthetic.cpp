#include "emofuse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "emofuse/rng.hpp"

namespace emofuse {

namespace {

constexpr int kSize = kSyntheticImageSize;
constexpr std::uint64_t kLabelFunctionSeed = 0x1abe1f0cULL;
constexpr double kFaceMissingRate = 0.10;
constexpr double kPoseMissingRate = 0.10;
constexpr double kJointDropRate = 0.10;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Inverse standard normal CDF by bisection on erfc; only used for a handful
// of thresholds.
double normal_quantile(double p) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

template <std::size_t N>
std::array<double, N> unit_vector(Rng& rng) {
  std::array<double, N> v{};
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

template <std::size_t N>
double dot(const std::array<double, N>& a, const std::array<double, N>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < N; ++i) s += a[i] * b[i];
  return s;
}

struct LabelFunction {
  std::array<std::array<double, 4>, kNumDiscrete> local{};
  std::array<std::array<double, 3>, kNumDiscrete> scene{};
  std::array<double, kNumDiscrete> threshold{};
  std::array<std::array<double, 4>, kNumContinuous> cont_local{};
  std::array<std::array<double, 3>, kNumContinuous> cont_scene{};

  LabelFunction() {
    Rng rng(kLabelFunctionSeed);
    for (std::size_t i = 0; i < kNumDiscrete; ++i) {
      local[i] = unit_vector<4>(rng);
      scene[i] = unit_vector<3>(rng);
      const double prevalence = rng.uniform(0.08, 0.45);
      threshold[i] = normal_quantile(1.0 - prevalence);
    }
    for (std::size_t k = 0; k < kNumContinuous; ++k) {
      cont_local[k] = unit_vector<4>(rng);
      cont_scene[k] = unit_vector<3>(rng);
    }
  }
};

const LabelFunction& label_function() {
  static const LabelFunction f;
  return f;
}

EmotionAnnotation annotate(const SyntheticLatents& z, double alpha) {
  const auto& f = label_function();
  const std::array<double, 4> u = {z.face[0], z.face[1], z.body[0], z.body[1]};
  const double wl = std::sqrt(1.0 - alpha), ws = std::sqrt(alpha);
  EmotionAnnotation a;
  std::size_t best = 0;
  double best_margin = -INFINITY;
  for (std::size_t i = 0; i < kNumDiscrete; ++i) {
    double score = wl * dot(f.local[i], u) + ws * dot(f.scene[i], z.scene);
    if (i == kDisconnection) score = std::sqrt(0.5) * score + std::sqrt(0.5) * z.distance;
    const double margin = score - f.threshold[i];
    a.disc[i] = margin > 0.0;
    if (margin > best_margin) {
      best_margin = margin;
      best = i;
    }
  }
  // Every record needs at least one positive category.
  a.disc[best] = 1;
  for (std::size_t k = 0; k < kNumContinuous; ++k) {
    a.cont[k] = static_cast<float>(sigmoid(wl * dot(f.cont_local[k], u) + ws * dot(f.cont_scene[k], z.scene)));
  }
  return a;
}

void fill_box(Image& img, const BBox& b, std::array<float, 3> rgb) {
  for (int y = b.y; y < b.y + b.h; ++y)
    for (int x = b.x; x < b.x + b.w; ++x)
      for (int c = 0; c < img.channels; ++c) img.at(y, x, c) = rgb[static_cast<std::size_t>(c)];
}

Pose render_pose(const BBox& body, const SyntheticLatents& z, Rng& rng) {
  const double cx = body.x + 0.5 * body.w, top = body.y, w = body.w, h = body.h;
  std::array<std::array<double, 2>, kNumJoints> p{};
  p[0] = {cx, top + 0.10 * h};                          // nose
  p[1] = {cx, top + 0.22 * h};                          // neck
  p[14] = {cx - 0.06 * w, top + 0.08 * h};              // eyes
  p[15] = {cx + 0.06 * w, top + 0.08 * h};
  p[16] = {cx - 0.14 * w, top + 0.10 * h};              // ears
  p[17] = {cx + 0.14 * w, top + 0.10 * h};
  const double arm_angle[2] = {1.4 + 1.1 * std::tanh(z.body[0]), 1.4 + 1.1 * std::tanh(z.body[1])};
  for (int side = 0; side < 2; ++side) {
    const double dir = side == 0 ? -1.0 : 1.0;  // right limbs on the image left
    const int s = side == 0 ? 2 : 5;
    p[s] = {cx + dir * 0.3 * w, top + 0.25 * h};
    const double t = arm_angle[side];
    p[s + 1] = {p[s][0] + dir * 0.2 * h * std::sin(t), p[s][1] + 0.2 * h * std::cos(t)};
    p[s + 2] = {p[s + 1][0] + dir * 0.18 * h * std::sin(t + 0.3), p[s + 1][1] + 0.18 * h * std::cos(t + 0.3)};
    const int hip = side == 0 ? 8 : 11;
    const double spread = 0.1 * w * (1.0 + 0.8 * std::tanh(z.body[0] + z.body[1]));
    p[hip] = {cx + dir * 0.15 * w, top + 0.55 * h};
    p[hip + 1] = {p[hip][0] + dir * spread, p[hip][1] + 0.22 * h};
    p[hip + 2] = {p[hip + 1][0] + dir * 0.5 * spread, p[hip + 1][1] + 0.2 * h};
  }
  Pose pose;
  for (int j = 0; j < kNumJoints; ++j) {
    // Head, neck and hips are always detected; limbs drop out at random.
    const bool core = j == 0 || j == 1 || j == 8 || j == 11;
    const bool dropped = rng.bernoulli(kJointDropRate);
    if (!core && dropped) continue;
    pose[static_cast<std::size_t>(j)] = Keypoint{static_cast<float>(std::clamp(p[j][0] / kSize, 0.0, 1.0)),
                                                 static_cast<float>(std::clamp(p[j][1] / kSize, 0.0, 1.0))};
  }
  return pose;
}

Sample render(const std::string& id, const SyntheticLatents& z, double alpha, Rng& rng) {
  Sample s;
  s.id = id;

  BBox body;
  body.w = 20 + static_cast<int>(rng.below(9));
  body.h = 34 + static_cast<int>(rng.below(11));
  body.x = static_cast<int>(rng.below(static_cast<std::uint64_t>(kSize - body.w + 1)));
  body.y = static_cast<int>(rng.below(static_cast<std::uint64_t>(kSize - body.h + 1)));
  const int fs = static_cast<int>(std::lround(0.45 * body.w));
  const BBox face{body.x + (body.w - fs) / 2, body.y + 1, fs, fs};

  Image img(kSize, kSize, 3);
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  for (int y = 0; y < kSize; ++y) {
    for (int x = 0; x < kSize; ++x) {
      const double texture = 0.05 * std::sin(0.6 * y + phase);
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = static_cast<float>(0.15 + 0.7 * sigmoid(1.3 * z.scene[c]) * (0.85 + 0.15 * y / (kSize - 1.0)) + texture);
      }
    }
  }
  fill_box(img, body, {static_cast<float>(sigmoid(1.3 * z.body[0])), static_cast<float>(sigmoid(1.3 * z.body[1])), 0.25f});
  fill_box(img, face, {static_cast<float>(sigmoid(1.3 * z.face[0])), static_cast<float>(sigmoid(1.3 * z.face[1])), 0.8f});
  for (auto& v : img.data) v = static_cast<float>(std::clamp(v + rng.normal(0.0, 0.02), 0.0, 1.0));

  Image depth(kSize, kSize, 1);
  for (int y = 0; y < kSize; ++y)
    for (int x = 0; x < kSize; ++x) depth.at(y, x, 0) = static_cast<float>(0.98 - 0.15 * y / (kSize - 1.0));
  BBox other;
  other.w = 12 + static_cast<int>(rng.below(5));
  other.h = 26 + static_cast<int>(rng.below(7));
  other.x = static_cast<int>(rng.below(static_cast<std::uint64_t>(kSize - other.w + 1)));
  other.y = kSize - other.h - static_cast<int>(rng.below(8));
  const double target_depth = rng.uniform(0.2, 0.35);
  fill_box(depth, other, {static_cast<float>(target_depth + 0.05 + 0.4 * sigmoid(z.distance)), 0, 0});
  fill_box(depth, body, {static_cast<float>(target_depth), 0, 0});

  s.image = std::move(img);
  s.depth = std::move(depth);
  s.body_bbox = body;
  if (!rng.bernoulli(kFaceMissingRate)) s.face_bbox = face;
  const bool pose_missing = rng.bernoulli(kPoseMissingRate);
  Pose pose = render_pose(body, z, rng);
  if (!pose_missing) s.pose = pose;
  s.annotation = annotate(z, alpha);
  return s;
}

}  // namespace

SyntheticDataset generate_synthetic_with_latents(std::int64_t n, std::uint64_t seed, double scene_signal) {
  if (n < 1) throw std::invalid_argument("generate_synthetic: n must be at least 1");
  if (!(scene_signal >= 0.0 && scene_signal <= 1.0)) {
    throw std::invalid_argument("generate_synthetic: scene_signal must lie in [0, 1]");
  }
  SyntheticDataset out;
  Rng rng(seed, "synthetic");
  char id[32];
  for (std::int64_t i = 0; i < n; ++i) {
    SyntheticLatents z;
    for (auto& v : z.face) v = rng.normal();
    for (auto& v : z.body) v = rng.normal();
    for (auto& v : z.scene) v = rng.normal();
    z.distance = rng.normal();
    std::snprintf(id, sizeof id, "syn%05lld", static_cast<long long>(i));
    out.manifest.samples.push_back(render(id, z, scene_signal, rng));
    out.latents.push_back(z);
  }
  out.manifest.category_priors = compute_priors(out.manifest.samples);
  return out;
}

DatasetManifest generate_synthetic(std::int64_t n, std::uint64_t seed, double scene_signal) {
  return generate_synthetic_with_latents(n, seed, scene_signal).manifest;
}

}  // namespace emofuse
