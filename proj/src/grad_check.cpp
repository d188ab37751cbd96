#include "emofuse/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace emofuse {
namespace {

double evaluate(const std::function<Tensor()>& f) {
  Tensor y = f();
  if (y.numel() != 1) throw ShapeError("finite_diff_check: f must return a scalar");
  const double v = y.item();
  if (!std::isfinite(v)) throw NonFiniteError("finite_diff_check: f evaluated to " + std::to_string(v));
  return v;
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                  Real eps) {
  if (!(eps > 0.0f)) throw std::invalid_argument("finite_diff_check: eps must be > 0");

  std::vector<bool> previously_required;
  for (auto& x : inputs) {
    previously_required.push_back(x.requires_grad());
    x.set_requires_grad(true);
    x.zero_grad();
  }
  {
    Tensor y = f();
    if (y.numel() != 1) throw ShapeError("finite_diff_check: f must return a scalar");
    if (!std::isfinite(y.item())) throw NonFiniteError("finite_diff_check: non-finite f");
    y.backward();
  }
  std::vector<std::vector<Real>> analytic;
  for (auto& x : inputs) {
    analytic.emplace_back(x.has_grad() ? std::vector<Real>(x.grad().begin(), x.grad().end())
                                       : std::vector<Real>(static_cast<std::size_t>(x.numel()), 0.0f));
  }

  GradCheckReport report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real original = values[i];
      const Real plus = original + eps;
      const Real minus = original - eps;
      values[i] = plus;
      const double f_plus = evaluate(f);
      values[i] = minus;
      const double f_minus = evaluate(f);
      values[i] = original;

      const double numeric = (f_plus - f_minus) / (static_cast<double>(plus) - minus);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (rel > report.max_relative_error || report.worst_index < 0) {
        report.max_relative_error = std::max(rel, report.max_relative_error);
        report.worst_tensor = t;
        report.worst_index = static_cast<std::int64_t>(i);
        report.analytic_at_worst = a;
        report.numeric_at_worst = numeric;
      }
    }
  }

  for (std::size_t t = 0; t < inputs.size(); ++t) {
    inputs[t].zero_grad();
    inputs[t].set_requires_grad(previously_required[t]);
  }
  return report;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, Real eps) {
  return finite_diff_check([&] { return f(x); }, {x}, eps).max_relative_error;
}

}  // namespace emofuse
