#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"

#include "emofuse/grad_check.hpp"
#include "emofuse/ops.hpp"
#include "emofuse/rng.hpp"
#include "emofuse/tensor_io.hpp"

using namespace emofuse;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = false) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<Real> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<Real>(rng.normal());
  return Tensor(std::move(shape), std::move(v), grad);
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("emofuse_unit_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("softmax of a zero vector is uniform") {
  const Tensor y = ops::softmax(Tensor({3}, {0, 0, 0}));
  for (Real v : y.values()) CHECK(v == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("softmax survives large logits") {
  const Tensor y = ops::softmax(Tensor({2, 3}, {1000, 1001, 1002, -1000, -1000, -1000}));
  double row0 = 0;
  for (int j = 0; j < 3; ++j) row0 += y.values()[j];
  CHECK(row0 == doctest::Approx(1.0));
  CHECK(y.values()[2] > y.values()[1]);
  CHECK(y.values()[3] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("layernorm of a constant vector is zero before the affine part") {
  const Tensor y = ops::layernorm(Tensor({1, 5}, std::vector<Real>(5, 3.25f)), Tensor(), Tensor());
  for (Real v : y.values()) CHECK(v == 0.0f);
}

TEST_CASE("gelu fixes zero and approaches identity and zero in the tails") {
  const Tensor y = ops::gelu(Tensor({3}, {0, 6, -6}));
  CHECK(y.values()[0] == 0.0f);
  CHECK(y.values()[1] == doctest::Approx(6.0).epsilon(1e-6));
  CHECK(std::abs(y.values()[2]) < 1e-6);
  // Phi(1) = 0.841344746...
  CHECK(ops::gelu(Tensor({1}, std::vector<Real>{1})).item() == doctest::Approx(0.841344746).epsilon(1e-6));
}

TEST_CASE("matmul matches a triple loop") {
  Rng rng(11);
  const Tensor a = random_tensor({2, 3, 4}, rng);
  const Tensor b = random_tensor({4, 5}, rng);
  const Tensor c = ops::matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 5});
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 5; ++j) {
      double s = 0;
      for (int k = 0; k < 4; ++k) s += double(a.values()[i * 4 + k]) * b.values()[k * 5 + j];
      CHECK(c.values()[i * 5 + j] == doctest::Approx(s).epsilon(1e-5));
    }
  }
}

TEST_CASE("conv2d matches a direct convolution") {
  Rng rng(5);
  const Tensor x = random_tensor({2, 3, 7, 6}, rng);
  const Tensor w = random_tensor({4, 3, 3, 3}, rng);
  const Tensor b = random_tensor({4}, rng);
  for (int stride : {1, 2}) {
    const Tensor y = ops::conv2d(x, w, b, stride, 1);
    const int oh = (7 + 2 - 3) / stride + 1, ow = (6 + 2 - 3) / stride + 1;
    REQUIRE(y.shape() == Shape{2, 4, oh, ow});
    for (int n = 0; n < 2; ++n)
      for (int o = 0; o < 4; ++o)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            double s = b.values()[o];
            for (int c = 0; c < 3; ++c)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const int iy = oy * stride + ky - 1, ix = ox * stride + kx - 1;
                  if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                  s += double(x.values()[((n * 3 + c) * 7 + iy) * 6 + ix]) * w.values()[((o * 3 + c) * 3 + ky) * 3 + kx];
                }
            CHECK(y.values()[((n * 4 + o) * oh + oy) * ow + ox] == doctest::Approx(s).epsilon(1e-5));
          }
  }
}

TEST_CASE("shape mismatches name the op and the shapes") {
  const Tensor a({2, 3}), b({3, 2});
  try {
    ops::add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    CHECK(what.find("add") != std::string::npos);
    CHECK(what.find("[2, 3]") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
  CHECK_THROWS_AS(ops::conv2d(Tensor({1, 2, 5, 5}), Tensor({1, 3, 3, 3}), Tensor(), 1, 1), ShapeError);
}

TEST_CASE("concat then split recovers the parts exactly") {
  Rng rng(2);
  const Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 5}, rng);
  const auto parts = ops::split(ops::concat({a, b}, 1), 1, {3, 5});
  REQUIRE(parts.size() == 2);
  CHECK(std::equal(parts[0].values().begin(), parts[0].values().end(), a.values().begin()));
  CHECK(std::equal(parts[1].values().begin(), parts[1].values().end(), b.values().begin()));
}

TEST_CASE("permute moves axes") {
  const Tensor x({2, 3}, {0, 1, 2, 3, 4, 5});
  const Tensor y = ops::permute(x, {1, 0});
  CHECK(y.shape() == Shape{3, 2});
  CHECK(std::vector<Real>(y.values().begin(), y.values().end()) == std::vector<Real>{0, 3, 1, 4, 2, 5});
}

TEST_CASE("merge_rows routes gradients to present rows and the fallback") {
  Tensor present({2, 2}, {1, 2, 3, 4}, true);
  Tensor fallback({2}, {9, 9}, true);
  const std::vector<std::int64_t> rows = {2, 0};
  Tensor y = ops::merge_rows(present, rows, fallback, 4);
  CHECK(std::vector<Real>(y.values().begin(), y.values().end()) == std::vector<Real>{3, 4, 9, 9, 1, 2, 9, 9});
  ops::sum(y).backward();
  CHECK(std::vector<Real>(fallback.grad().begin(), fallback.grad().end()) == std::vector<Real>{2, 2});
  CHECK(std::vector<Real>(present.grad().begin(), present.grad().end()) == std::vector<Real>{1, 1, 1, 1});
}

TEST_CASE("gradients accumulate across backward calls until cleared") {
  Tensor x({3}, {1, 2, 3}, true);
  ops::sum(ops::mul(x, x)).backward();
  ops::sum(ops::mul(x, x)).backward();
  CHECK(x.grad()[2] == doctest::Approx(12.0));
  x.zero_grad();
  CHECK(x.grad()[2] == 0.0f);
}

TEST_CASE("non-finite results are rejected") {
  CHECK_THROWS_AS(ops::scale(Tensor({1}, std::vector<Real>{std::numeric_limits<Real>::max()}), 10.0f), NonFiniteError);
}

TEST_CASE("finite_diff_check reference cases") {
  Rng rng(3);
  // Single precision: f is rounded to ~1e-6 relative before differencing, so
  // inputs stay away from zero where the gradient 2x would vanish. The
  // tighter any-x bound is checked in the double build.
  for (int seed = 0; seed < 10; ++seed) {
    Tensor x = random_tensor({6}, rng);
    for (auto& v : x.values()) v = std::copysign(0.5f + std::min(std::abs(v), 1.0f), v);
    CHECK(finite_diff_check([](const Tensor& t) { return ops::sum(ops::mul(t, t)); }, x, 1e-3f) < 5e-3);
    CHECK(finite_diff_check([](const Tensor& t) { return ops::sum(t); }, x, 1e-3f) < 5e-3);
  }
  Tensor x({2}, {1, 2});
  CHECK_THROWS_AS(finite_diff_check([](const Tensor& t) { return t; }, x, 1e-3f), ShapeError);
  CHECK_THROWS_AS(finite_diff_check([](const Tensor& t) { return ops::sum(t); }, x, 0.0f), std::invalid_argument);
}

TEST_CASE("finite_diff_check leaves inputs untouched") {
  Tensor x({3}, {0.5f, -1.25f, 2.0f});
  finite_diff_check([](const Tensor& t) { return ops::sum(ops::gelu(t)); }, x, 1e-3f);
  CHECK(std::vector<Real>(x.values().begin(), x.values().end()) == std::vector<Real>{0.5f, -1.25f, 2.0f});
  CHECK_FALSE(x.requires_grad());
}

TEST_CASE("finite_diff_check reports a wrong gradient") {
  // relu's derivative at exactly 0 is taken as 0 while the central
  // difference sees 0.5.
  Tensor x({1}, std::vector<Real>{0.0f});
  CHECK(finite_diff_check([](const Tensor& t) { return ops::sum(ops::relu(t)); }, x, 1e-3f) >= 0.5);
}

TEST_CASE("parameter names are unique and keep insertion order") {
  ParameterSet ps;
  ps.add("b", Tensor({1}));
  ps.add("a", Tensor({2}));
  CHECK_THROWS(ps.add("a", Tensor({3})));
  CHECK(ps.all()[0].name == "b");
  CHECK(ps.total_elements() == 3);
}

TEST_CASE("f32 files round trip bit for bit") {
  const fs::path dir = temp_dir("f32");
  F32Array a{{2, 3}, {0.1f, -2.5f, 3e-8f, 1e30f, 0.0f, -0.0f}};
  write_f32(dir / "a.f32", a);
  const F32Array b = read_f32(dir / "a.f32");
  CHECK(b.shape == a.shape);
  CHECK(std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0);

  std::ofstream(dir / "bad.f32") << "{\"shape\": [4], \"dtype\": \"f32\"}\n" << "abc";
  CHECK_THROWS_AS(read_f32(dir / "bad.f32"), FormatError);
  std::ofstream(dir / "bad2.f32") << "not json\n";
  CHECK_THROWS_AS(read_f32(dir / "bad2.f32"), FormatError);
}

TEST_CASE("parameter sets round trip through a checkpoint directory") {
  const fs::path dir = temp_dir("params");
  Rng rng(8);
  ParameterSet a, b;
  a.add("enc.w", random_tensor({3, 4}, rng));
  a.add("enc.b", random_tensor({4}, rng));
  b.add("enc.w", Tensor({3, 4}));
  b.add("enc.b", Tensor({4}));
  save_parameters(dir, a, {{"epoch", 7}});
  const auto meta = load_parameters(dir, b);
  CHECK(meta["epoch"] == 7);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto va = a.all()[i].tensor.values(), vb = b.all()[i].tensor.values();
    CHECK(std::equal(va.begin(), va.end(), vb.begin()));
  }
  ParameterSet c;
  c.add("enc.w", Tensor({4, 3}));
  c.add("enc.b", Tensor({4}));
  CHECK_THROWS_AS(load_parameters(dir, c), FormatError);
}
