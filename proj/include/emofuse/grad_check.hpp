#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "emofuse/tensor.hpp"

namespace emofuse {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_tensor = 0;
  std::int64_t worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::int64_t coordinates = 0;
};

/// Compares the analytic gradient of a scalar function against central
/// differences, coordinate by coordinate over every tensor in `inputs`.
///
/// `f` must rebuild its graph from the current values of `inputs` on every
/// call. The inputs are perturbed in place and restored afterwards. Per
/// coordinate the relative error is |a - n| / max(|a|, |n|, 1e-8); the
/// maximum is reported. The numeric quotient divides by the perturbation
/// actually representable in the scalar type, not by 2*eps.
///
/// Throws NonFiniteError if `f` ever evaluates to a non-finite value.
GradCheckReport finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                  Real eps);

/// Single-tensor convenience form; returns the maximum relative error.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, Real eps);

}  // namespace emofuse
