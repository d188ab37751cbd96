#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "emofuse/categories.hpp"
#include "emofuse/tensor.hpp"

namespace emofuse {

struct LossWeights {
  double lambda_disc = 1.0;
  double lambda_cont = 1.0;
  double c = 1.2;
  std::array<double, kNumContinuous> v = {1.0, 1.0, 1.0};
  std::array<double, kNumDiscrete> priors{};  // p_i, taken from the training split
  double huber_delta = 1.0;

  /// Checks everything except the priors-dependent log condition, which
  /// category_weights() enforces once priors are known.
  void validate(const std::string& path) const;
};

/// w_i = 1 / ln(c + p_i). Throws std::domain_error when c + p_i <= 1.
std::array<double, kNumDiscrete> category_weights(const LossWeights& lw);

/// sum_i w_i (real_i - pred_i)^2
double loss_disc(std::span<const double> pred, std::span<const double> real, std::span<const double> w);
/// sum_k v_k h(real_k - pred_k), h the smooth-L1 of smooth_l1_value().
double loss_cont(std::span<const double> pred, std::span<const double> real, std::span<const double> v,
                 double delta);
double loss_comb(double disc, double cont, const LossWeights& lw);

/// 0.5 x^2 / delta for |x| < delta, |x| - 0.5 delta otherwise.
double smooth_l1_value(double x, double delta);

// Differentiable batch forms: per-sample losses as above, averaged over the
// batch rows. `real` holds constant targets of the same shape as `pred`.
Tensor loss_disc(const Tensor& pred, const Tensor& real, std::span<const double> w);
Tensor loss_cont(const Tensor& pred, const Tensor& real, std::span<const double> v, double delta);
Tensor loss_comb(const Tensor& disc, const Tensor& cont, const LossWeights& lw);

}  // namespace emofuse
