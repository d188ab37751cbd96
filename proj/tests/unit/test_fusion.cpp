#include <cmath>
#include <memory>

#include "doctest.h"

#include "emofuse/fusion.hpp"
#include "emofuse/ops.hpp"

using namespace emofuse;

namespace {

Tensor random_vector(std::int64_t n, Rng& rng, bool grad = false) {
  std::vector<Real> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<Real>(rng.normal());
  return Tensor({n}, std::move(v), grad);
}

ModalityFeature feature(Modality m, const Tensor& v) { return ModalityFeature{m, v, true}; }
ModalityFeature absent(Modality m) { return ModalityFeature{m, {}, false}; }

bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

bool zero_or_no_grad(const Tensor& t) {
  if (!t.has_grad()) return true;
  for (Real g : t.grad())
    if (g != 0.0f) return false;
  return true;
}

struct EmbraceFixture {
  FusionConfig cfg;
  ParameterSet ps;
  Rng init{21};
  std::unique_ptr<Embrace> embrace;
  Tensor body, pose;

  explicit EmbraceFixture(std::array<double, 2> probs = {0.5, 0.5}) {
    cfg.modality_probs = probs;
    embrace = std::make_unique<Embrace>("embrace", cfg, ps, init);
    Rng rng(22);
    body = random_vector(64, rng);
    pose = random_vector(64, rng);
  }
};

}  // namespace

TEST_CASE("embrace: a single present modality passes its docking through exactly") {
  EmbraceFixture fx;
  Rng rng(1);
  const Tensor dock_body = ops::reshape(fx.embrace->dock(0, ops::reshape(fx.body, {1, 64})), {64});
  const Tensor dock_pose = ops::reshape(fx.embrace->dock(1, ops::reshape(fx.pose, {1, 64})), {64});
  for (bool training : {false, true}) {
    const auto only_body = fx.embrace->embrace(feature(Modality::BodyPose, fx.body), absent(Modality::BodyPose), training, rng);
    CHECK(same_values(only_body.vector, dock_body));
    const auto only_pose = fx.embrace->embrace(absent(Modality::BodyPose), feature(Modality::BodyPose, fx.pose), training, rng);
    CHECK(same_values(only_pose.vector, dock_pose));
  }
  CHECK_FALSE(fx.embrace->embrace(absent(Modality::BodyPose), absent(Modality::BodyPose), true, rng).present);
}

TEST_CASE("embrace: deterministic evaluation is the probability-weighted mean") {
  EmbraceFixture fx;
  Rng rng(1);
  const auto out = fx.embrace->embrace(feature(Modality::BodyPose, fx.body), feature(Modality::BodyPose, fx.pose), false, rng);
  const Tensor db = fx.embrace->dock(0, ops::reshape(fx.body, {1, 64}));
  const Tensor dp = fx.embrace->dock(1, ops::reshape(fx.pose, {1, 64}));
  for (int j = 0; j < 64; ++j) {
    CHECK(out.vector.values()[j] == doctest::Approx(0.5 * db.values()[j] + 0.5 * dp.values()[j]).epsilon(1e-6));
  }
}

TEST_CASE("embrace: every coordinate copies exactly one docking in training") {
  EmbraceFixture fx;
  Rng rng(2);
  EmbraceState state;
  const auto out = fx.embrace->embrace(feature(Modality::BodyPose, fx.body), feature(Modality::BodyPose, fx.pose), true, rng, &state);
  const Tensor db = fx.embrace->dock(0, ops::reshape(fx.body, {1, 64}));
  const Tensor dp = fx.embrace->dock(1, ops::reshape(fx.pose, {1, 64}));
  REQUIRE(state.selection.size() == 1);
  for (int j = 0; j < 64; ++j) {
    const int m = state.selection[0][j];
    REQUIRE((m == 0 || m == 1));
    CHECK(out.vector.values()[j] == (m == 0 ? db : dp).values()[j]);
  }
}

TEST_CASE("embrace: selection frequencies follow the configured probabilities") {
  EmbraceFixture fx({0.7, 0.3});
  Rng rng(3);
  EmbraceState state;
  // 157 draws of 64 coordinates: just over 10k selections.
  std::int64_t body = 0, total = 0;
  for (int draw = 0; draw < 157; ++draw) {
    fx.embrace->embrace(feature(Modality::BodyPose, fx.body), feature(Modality::BodyPose, fx.pose), true, rng, &state);
    for (int m : state.selection[0]) {
      body += m == 0;
      ++total;
    }
  }
  const double freq = static_cast<double>(body) / total;
  CHECK(std::abs(freq - 0.7) <= 0.02);
  CHECK(std::abs((1.0 - freq) - 0.3) <= 0.02);
}

TEST_CASE("embrace: zero probability on the only present modality falls back to it") {
  EmbraceFixture fx({1.0, 0.0});
  Rng rng(4);
  const auto out = fx.embrace->embrace(absent(Modality::BodyPose), feature(Modality::BodyPose, fx.pose), true, rng);
  CHECK(out.present);
  CHECK(same_values(out.vector, ops::reshape(fx.embrace->dock(1, ops::reshape(fx.pose, {1, 64})), {64})));
}

TEST_CASE("embrace: an absent modality's docking gets no gradient") {
  EmbraceFixture fx;
  Rng rng(5);
  fx.ps.zero_grad();
  const auto out = fx.embrace->embrace(feature(Modality::BodyPose, fx.body), absent(Modality::BodyPose), true, rng);
  ops::sum(ops::mul(out.vector, out.vector)).backward();
  CHECK(zero_or_no_grad(fx.ps.at("embrace.dock_pose.w").tensor));
  CHECK(zero_or_no_grad(fx.ps.at("embrace.dock_pose.b").tensor));
  CHECK_FALSE(zero_or_no_grad(fx.ps.at("embrace.dock_body.w").tensor));

  // In a batch, the row without pose adds nothing to the pose gradient.
  StreamBatch body{Tensor({2, 64}), {0, 1}, 2}, pose{Tensor({1, 64}), {0}, 2};
  std::copy(fx.body.values().begin(), fx.body.values().end(), body.features.values().begin());
  std::copy(fx.body.values().begin(), fx.body.values().end(), body.features.values().begin() + 64);
  std::copy(fx.pose.values().begin(), fx.pose.values().end(), pose.features.values().begin());
  auto batch_grad = [&](const StreamBatch& b, const StreamBatch& p) {
    fx.ps.zero_grad();
    const StreamBatch out = fx.embrace->forward(b, p, false, rng);
    ops::sum(out.features).backward();
    const auto g = fx.ps.at("embrace.dock_pose.w").tensor.grad();
    return std::vector<Real>(g.begin(), g.end());
  };
  StreamBatch body_one{ops::slice(body.features, 0, 0, 1), {0}, 1}, pose_one{pose.features, {0}, 1};
  CHECK(batch_grad(body, pose) == batch_grad(body_one, pose_one));
}

TEST_CASE("embrace: probabilities are validated") {
  FusionConfig cfg;
  cfg.modality_probs = {0.6, 0.6};
  CHECK_THROWS_AS(cfg.validate("model.fusion"), ConfigError);
  cfg.modality_probs = {1.2, -0.2};
  CHECK_THROWS_AS(cfg.validate("model.fusion"), ConfigError);
  cfg.embrace_dim = 0;
  cfg.modality_probs = {0.5, 0.5};
  CHECK_THROWS_AS(cfg.validate("model.fusion"), ConfigError);
}

TEST_CASE("fuse_concat: shapes, graceful degradation and determinism") {
  FusionConfig cfg;
  ParameterSet ps;
  Rng init(30), rng(31);
  Fusion fusion("fusion", cfg, ps, init);
  std::array<ModalityFeature, kNumStreams> bundle;
  for (int m = 0; m < kNumStreams; ++m) bundle[m] = feature(static_cast<Modality>(m), random_vector(64, rng));

  std::array<StreamBatch, kNumStreams> streams;
  for (int m = 0; m < kNumStreams; ++m) streams[m] = to_stream(bundle[m]);
  CHECK(fusion.concat(streams).shape() == Shape{1, 320});
  const Tensor a = fusion.fuse_concat(bundle);
  CHECK(a.shape() == Shape{256});
  CHECK(same_values(a, fusion.fuse_concat(bundle)));

  std::array<ModalityFeature, kNumStreams> scene_only;
  for (int m = 0; m < kNumStreams; ++m) scene_only[m] = absent(static_cast<Modality>(m));
  CHECK_THROWS_WITH(fusion.fuse_concat(scene_only), doctest::Contains("no modality available"));
  scene_only[static_cast<int>(Modality::Scene)] = bundle[static_cast<int>(Modality::Scene)];
  CHECK(fusion.fuse_concat(scene_only).shape() == Shape{256});
}

TEST_CASE("fuse_concat: absent streams use their learned embedding") {
  FusionConfig cfg;
  ParameterSet ps;
  Rng init(32), rng(33);
  Fusion fusion("fusion", cfg, ps, init);
  std::array<StreamBatch, kNumStreams> streams;
  for (int m = 0; m < kNumStreams; ++m) streams[m].batch = 1;
  streams[2] = to_stream(feature(Modality::Scene, random_vector(64, rng)));
  const Tensor c = fusion.concat(streams);
  const Tensor& face_absent = fusion.absent_embedding(Modality::Face);
  for (int j = 0; j < 64; ++j) CHECK(c.values()[j] == face_absent.values()[j]);
  bool nonzero = false;
  for (Real v : face_absent.values()) nonzero = nonzero || v != 0.0f;
  CHECK(nonzero);
}

TEST_CASE("heads: zero input gives one half, outputs stay in (0, 1)") {
  FusionConfig cfg;
  ParameterSet ps;
  Rng init(40), rng(41);
  Heads heads("heads", cfg, ps, init);
  const HeadOutput zero = heads.forward(Tensor({1, 256}));
  for (Real v : zero.disc.values()) CHECK(v == 0.5f);
  for (Real v : zero.cont.values()) CHECK(v == 0.5f);
  Tensor x = random_vector(256, rng);
  const HeadOutput out = heads.forward(ops::reshape(ops::scale(x, 5.0f), {1, 256}));
  CHECK(out.disc.shape() == Shape{1, 26});
  CHECK(out.cont.shape() == Shape{1, 3});
  for (Real v : out.disc.values()) CHECK((v > 0.0f && v < 1.0f));
  CHECK_THROWS_AS(heads.forward(Tensor({1, 255})), ShapeError);
}

TEST_CASE("heads: each category ignores the other categories' weights") {
  FusionConfig cfg;
  ParameterSet ps;
  Rng init(42), rng(43);
  Heads heads("heads", cfg, ps, init);
  const Tensor x = ops::reshape(random_vector(256, rng), {1, 256});
  const HeadOutput before = heads.forward(x);
  auto w = ps.at("heads.disc.w").tensor;
  // Scramble every column except category 7.
  for (std::int64_t r = 0; r < 256; ++r)
    for (std::int64_t c = 0; c < 26; ++c)
      if (c != 7) w.values()[r * 26 + c] = static_cast<Real>(rng.normal());
  const HeadOutput after = heads.forward(x);
  CHECK(after.disc.values()[7] == before.disc.values()[7]);
  CHECK(after.disc.values()[8] != before.disc.values()[8]);
}

TEST_CASE("heads: softmax mode sums to one over four outputs") {
  FusionConfig cfg;
  cfg.head = DiscreteHead::Softmax4;
  ParameterSet ps;
  Rng init(44), rng(45);
  Heads heads("heads", cfg, ps, init);
  const HeadOutput out = heads.forward(ops::reshape(random_vector(256, rng), {1, 256}));
  REQUIRE(out.disc.shape() == Shape{1, 4});
  double s = 0;
  for (Real v : out.disc.values()) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
}
