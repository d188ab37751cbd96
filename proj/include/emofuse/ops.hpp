#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "emofuse/tensor.hpp"

// Differentiable operators. Every op validates shapes up front and throws
// ShapeError naming the op and the offending shapes.
namespace emofuse::ops {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real s);
Tensor add_scalar(const Tensor& a, Real s);

// x[..., n] + b[n]
Tensor add_bias(const Tensor& x, const Tensor& bias);

// a[..., m, k] x b[k, n] -> [..., m, n]; leading dims of `a` are flattened.
Tensor matmul(const Tensor& a, const Tensor& b);
// a[B, m, k] x b[B, k, n] -> [B, m, n]
Tensor bmm(const Tensor& a, const Tensor& b);
// x[..., in] W[in, out] + b[out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// x[B, C, H, W], weight[O, C, k, k], bias[O]; square kernel, zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);

inline constexpr Real kLayerNormEps = 1e-5f;
// Normalizes over the last axis. gamma/beta may be undefined for the bare
// normalization.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 Real eps = kLayerNormEps);

// Over the last axis, max-subtracted.
Tensor softmax(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// 0.5 x^2 / delta inside |x| < delta, |x| - 0.5 delta outside.
Tensor smooth_l1(const Tensor& x, Real delta);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reduces one axis away.
Tensor sum_axis(const Tensor& x, int axis);
Tensor mean_axis(const Tensor& x, int axis);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<std::int64_t>& sizes);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& order);

// x[N, ...] -> rows listed in `rows`, in that order.
Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> rows);

// Builds [n_rows, D]: row rows[i] takes present[i]; every other row takes
// `fallback` (shape [D]). Gradients flow to both sources.
Tensor merge_rows(const Tensor& present, std::span<const std::int64_t> rows,
                  const Tensor& fallback, std::int64_t n_rows);

}  // namespace emofuse::ops
