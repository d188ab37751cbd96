#include "emofuse/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "emofuse/ops.hpp"

namespace emofuse {

void LossWeights::validate(const std::string& path) const {
  auto nonneg = [&](double x, const std::string& field) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw ConfigError(path + "." + field + " must be a nonnegative number (got " + std::to_string(x) + ")");
    }
  };
  nonneg(lambda_disc, "lambda_disc");
  nonneg(lambda_cont, "lambda_cont");
  for (std::size_t k = 0; k < v.size(); ++k) nonneg(v[k], "v[" + std::to_string(k) + "]");
  if (!(huber_delta > 0.0) || !std::isfinite(huber_delta)) throw ConfigError(path + ".huber_delta must be positive");
  if (!(c > 0.0) || !std::isfinite(c)) throw ConfigError(path + ".c must be positive");
}

std::array<double, kNumDiscrete> category_weights(const LossWeights& lw) {
  std::array<double, kNumDiscrete> w{};
  for (std::size_t i = 0; i < kNumDiscrete; ++i) {
    const double arg = lw.c + lw.priors[i];
    if (!(arg > 1.0)) {
      throw std::domain_error("category_weights: c + p_" + std::to_string(i) + " = " + std::to_string(arg) +
                              " must exceed 1");
    }
    w[i] = 1.0 / std::log(arg);
  }
  return w;
}

namespace {

void require_lengths(const char* op, std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || a != c) {
    throw ShapeError(std::string(op) + ": lengths " + std::to_string(a) + ", " + std::to_string(b) + ", " +
                     std::to_string(c) + " differ");
  }
}

}  // namespace

double smooth_l1_value(double x, double delta) {
  const double a = std::abs(x);
  return a < delta ? 0.5 * x * x / delta : a - 0.5 * delta;
}

double loss_disc(std::span<const double> pred, std::span<const double> real, std::span<const double> w) {
  require_lengths("loss_disc", pred.size(), real.size(), w.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += w[i] * (real[i] - pred[i]) * (real[i] - pred[i]);
  return s;
}

double loss_cont(std::span<const double> pred, std::span<const double> real, std::span<const double> v,
                 double delta) {
  require_lengths("loss_cont", pred.size(), real.size(), v.size());
  double s = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) s += v[k] * smooth_l1_value(real[k] - pred[k], delta);
  return s;
}

double loss_comb(double disc, double cont, const LossWeights& lw) {
  return lw.lambda_disc * disc + lw.lambda_cont * cont;
}

namespace {

// [B, K] matrix whose every row is `w`.
Tensor row_weights(std::span<const double> w, std::int64_t b) {
  std::vector<Real> v;
  v.reserve(static_cast<std::size_t>(b) * w.size());
  for (std::int64_t r = 0; r < b; ++r)
    for (double x : w) v.push_back(static_cast<Real>(x));
  return Tensor({b, static_cast<std::int64_t>(w.size())}, std::move(v));
}

void require_batch(const char* op, const Tensor& pred, const Tensor& real, std::size_t k) {
  if (pred.rank() != 2 || pred.shape() != real.shape() || pred.dim(1) != static_cast<std::int64_t>(k)) {
    throw ShapeError(std::string(op) + ": pred " + shape_str(pred.shape()) + ", real " + shape_str(real.shape()) +
                     ", weights of length " + std::to_string(k));
  }
}

}  // namespace

Tensor loss_disc(const Tensor& pred, const Tensor& real, std::span<const double> w) {
  require_batch("loss_disc", pred, real, w.size());
  const Tensor diff = ops::sub(real, pred);
  const Tensor weighted = ops::mul(ops::mul(diff, diff), row_weights(w, pred.dim(0)));
  return ops::mean(ops::sum_axis(weighted, 1));
}

Tensor loss_cont(const Tensor& pred, const Tensor& real, std::span<const double> v, double delta) {
  require_batch("loss_cont", pred, real, v.size());
  const Tensor h = ops::smooth_l1(ops::sub(real, pred), static_cast<Real>(delta));
  return ops::mean(ops::sum_axis(ops::mul(h, row_weights(v, pred.dim(0))), 1));
}

Tensor loss_comb(const Tensor& disc, const Tensor& cont, const LossWeights& lw) {
  return ops::add(ops::scale(disc, static_cast<Real>(lw.lambda_disc)),
                  ops::scale(cont, static_cast<Real>(lw.lambda_cont)));
}

}  // namespace emofuse
