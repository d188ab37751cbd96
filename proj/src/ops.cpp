#include "emofuse/ops.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

namespace emofuse::ops {
namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ArrMap = Eigen::Map<Eigen::Array<Real, Eigen::Dynamic, 1>>;
using ConstArrMap = Eigen::Map<const Eigen::Array<Real, Eigen::Dynamic, 1>>;

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

int normalize_axis(const char* op, int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    shape_fail(op, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return axis;
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisView {
  std::int64_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& s, int axis) {
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[i];
  v.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

// Unary elementwise op given f and df/dx evaluated from (x, y).
template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df) {
  auto xv = x.values();
  std::vector<Real> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result(x.shape(), std::move(out), op, {x},
                     [x, df](std::span<const Real> y, std::span<const Real> g) mutable {
                       auto gx = x.mutable_grad();
                       auto xv = std::as_const(x).values();
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * df(xv[i], y[i]);
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), "add", {a, b},
                     [a, b](std::span<const Real>, std::span<const Real> g) mutable {
                       for (const Tensor* t : {&a, &b}) {
                         if (!t->requires_grad()) continue;
                         auto gt = t->mutable_grad();
                         for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), "sub", {a, b},
                     [a, b](std::span<const Real>, std::span<const Real> g) mutable {
                       if (a.requires_grad()) {
                         auto ga = a.mutable_grad();
                         for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                       }
                       if (b.requires_grad()) {
                         auto gb = b.mutable_grad();
                         for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), "mul", {a, b},
                     [a, b](std::span<const Real>, std::span<const Real> g) mutable {
                       auto av = std::as_const(a).values(), bv = std::as_const(b).values();
                       if (a.requires_grad()) {
                         auto ga = a.mutable_grad();
                         for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
                       }
                       if (b.requires_grad()) {
                         auto gb = b.mutable_grad();
                         for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
                       }
                     });
}

Tensor scale(const Tensor& a, Real s) {
  return unary(
      a, "scale", [s](Real x) { return x * s; }, [s](Real, Real) { return s; });
}

Tensor add_scalar(const Tensor& a, Real s) {
  return unary(
      a, "add_scalar", [s](Real x) { return x + s; }, [](Real, Real) { return 1.0f; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() < 1 || x.dim(-1) != bias.dim(0)) {
    shape_fail("add_bias", "cannot add bias " + shape_str(bias.shape()) + " to " +
                               shape_str(x.shape()));
  }
  const std::int64_t n = bias.dim(0);
  auto xv = x.values();
  auto bv = bias.values();
  std::vector<Real> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % n];
  return make_result(x.shape(), std::move(out), "add_bias", {x, bias},
                     [x, bias, n](std::span<const Real>, std::span<const Real> g) mutable {
                       if (x.requires_grad()) {
                         auto gx = x.mutable_grad();
                         for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                       }
                       if (bias.requires_grad()) {
                         auto gb = bias.mutable_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.dim(-1) != b.dim(0)) {
    shape_fail("matmul", "incompatible shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  }
  const std::int64_t k = b.dim(0), n = b.dim(1);
  const std::int64_t m = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<Real> out(static_cast<std::size_t>(m * n));
  MatMap(out.data(), m, n).noalias() =
      ConstMatMap(a.values().data(), m, k) * ConstMatMap(b.values().data(), k, n);
  return make_result(std::move(out_shape), std::move(out), "matmul", {a, b},
                     [a, b, m, k, n](std::span<const Real>, std::span<const Real> g) mutable {
                       ConstMatMap gm(g.data(), m, n);
                       if (a.requires_grad()) {
                         MatMap(a.mutable_grad().data(), m, k).noalias() +=
                             gm * ConstMatMap(std::as_const(b).values().data(), k, n).transpose();
                       }
                       if (b.requires_grad()) {
                         MatMap(b.mutable_grad().data(), k, n).noalias() +=
                             ConstMatMap(std::as_const(a).values().data(), m, k).transpose() * gm;
                       }
                     });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    shape_fail("bmm", "incompatible shapes " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
  }
  const std::int64_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<Real> out(static_cast<std::size_t>(batch * m * n));
  for (std::int64_t i = 0; i < batch; ++i) {
    MatMap(out.data() + i * m * n, m, n).noalias() =
        ConstMatMap(a.values().data() + i * m * k, m, k) *
        ConstMatMap(b.values().data() + i * k * n, k, n);
  }
  return make_result(
      Shape{batch, m, n}, std::move(out), "bmm", {a, b},
      [a, b, batch, m, k, n](std::span<const Real>, std::span<const Real> g) mutable {
        const Real* av = std::as_const(a).values().data();
        const Real* bv = std::as_const(b).values().data();
        Real* ga = a.requires_grad() ? a.mutable_grad().data() : nullptr;
        Real* gb = b.requires_grad() ? b.mutable_grad().data() : nullptr;
        for (std::int64_t i = 0; i < batch; ++i) {
          ConstMatMap gm(g.data() + i * m * n, m, n);
          if (ga) {
            MatMap(ga + i * m * k, m, k).noalias() +=
                gm * ConstMatMap(bv + i * k * n, k, n).transpose();
          }
          if (gb) {
            MatMap(gb + i * k * n, k, n).noalias() +=
                ConstMatMap(av + i * m * k, m, k).transpose() * gm;
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_bias(y, bias) : y;
}

namespace {

struct ConvGeom {
  std::int64_t batch, in_c, h, w, out_c, k, stride, pad, out_h, out_w;
  std::int64_t patch() const { return in_c * k * k; }
  std::int64_t pixels() const { return out_h * out_w; }
};

// cols[(c*k + ky)*k + kx, oy*out_w + ox] = x[c, oy*stride + ky - pad, ox*stride + kx - pad]
// Output columns [lo, hi) read inside the image along one axis for kernel
// offset `k`.
std::pair<std::int64_t, std::int64_t> valid_range(std::int64_t out, std::int64_t in, std::int64_t k,
                                                  std::int64_t stride, std::int64_t pad) {
  std::int64_t lo = 0;
  while (lo < out && lo * stride + k - pad < 0) ++lo;
  std::int64_t hi = out;
  while (hi > lo && (hi - 1) * stride + k - pad >= in) --hi;
  return {lo, hi};
}

void im2col(const ConvGeom& g, const Real* x, Real* cols) {
  for (std::int64_t c = 0; c < g.in_c; ++c) {
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        Real* row = cols + ((c * g.k + ky) * g.k + kx) * g.pixels();
        const auto [lo, hi] = valid_range(g.out_w, g.w, kx, g.stride, g.pad);
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          Real* dst = row + oy * g.out_w;
          const std::int64_t iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.out_w, Real(0));
            continue;
          }
          const Real* src = x + (c * g.h + iy) * g.w + kx - g.pad;
          std::fill(dst, dst + lo, Real(0));
          for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride];
          std::fill(dst + hi, dst + g.out_w, Real(0));
        }
      }
    }
  }
}

void col2im(const ConvGeom& g, const Real* cols, Real* dx) {
  for (std::int64_t c = 0; c < g.in_c; ++c) {
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        const Real* row = cols + ((c * g.k + ky) * g.k + kx) * g.pixels();
        const auto [lo, hi] = valid_range(g.out_w, g.w, kx, g.stride, g.pad);
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          const Real* src = row + oy * g.out_w;
          Real* dst = dx + (c * g.h + iy) * g.w + kx - g.pad;
          for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox * g.stride] += src[ox];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1) ||
      weight.dim(2) != weight.dim(3) || (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0)))) {
    shape_fail("conv2d", "input " + shape_str(x.shape()) + ", weight " +
                             shape_str(weight.shape()) +
                             (bias.defined() ? ", bias " + shape_str(bias.shape()) : ""));
  }
  if (stride < 1 || padding < 0) shape_fail("conv2d", "stride must be >= 1 and padding >= 0");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), stride, padding,
             0, 0};
  g.out_h = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.out_w = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  if (g.out_h < 1 || g.out_w < 1) {
    shape_fail("conv2d", "kernel larger than padded input " + shape_str(x.shape()));
  }

  std::vector<Real> out(static_cast<std::size_t>(g.batch * g.out_c * g.pixels()));
  const std::int64_t col_size = g.patch() * g.pixels();
  // Kept for the weight gradient when one is needed.
  auto cols = std::make_shared<std::vector<Real>>(
      static_cast<std::size_t>(col_size * (weight.requires_grad() ? g.batch : 1)));
  ConstMatMap wm(weight.values().data(), g.out_c, g.patch());
  const Real* xv = x.values().data();
  for (std::int64_t b = 0; b < g.batch; ++b) {
    Real* cb = cols->data() + (weight.requires_grad() ? b * col_size : 0);
    im2col(g, xv + b * g.in_c * g.h * g.w, cb);
    MatMap om(out.data() + b * g.out_c * g.pixels(), g.out_c, g.pixels());
    om.noalias() = wm * ConstMatMap(cb, g.patch(), g.pixels());
    if (bias.defined()) {
      auto bv = bias.values();
      for (std::int64_t o = 0; o < g.out_c; ++o) om.row(o).array() += bv[o];
    }
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      Shape{g.batch, g.out_c, g.out_h, g.out_w}, std::move(out), "conv2d", inputs,
      [x, weight, bias, g, cols, col_size](std::span<const Real>, std::span<const Real> grad) mutable {
        std::vector<Real> dcols;
        ConstMatMap wm(std::as_const(weight).values().data(), g.out_c, g.patch());
        Real* gx = x.requires_grad() ? x.mutable_grad().data() : nullptr;
        Real* gw = weight.requires_grad() ? weight.mutable_grad().data() : nullptr;
        Real* gb = bias.defined() && bias.requires_grad() ? bias.mutable_grad().data() : nullptr;
        if (gx) dcols.resize(static_cast<std::size_t>(col_size));
        for (std::int64_t b = 0; b < g.batch; ++b) {
          ConstMatMap gm(grad.data() + b * g.out_c * g.pixels(), g.out_c, g.pixels());
          if (gb) {
            for (std::int64_t o = 0; o < g.out_c; ++o) gb[o] += gm.row(o).sum();
          }
          if (gw) {
            MatMap(gw, g.out_c, g.patch()).noalias() +=
                gm * ConstMatMap(cols->data() + b * col_size, g.patch(), g.pixels()).transpose();
          }
          if (gx) {
            MatMap(dcols.data(), g.patch(), g.pixels()).noalias() = wm.transpose() * gm;
            col2im(g, dcols.data(), gx + b * g.in_c * g.h * g.w);
          }
        }
      });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  if (x.rank() < 1) shape_fail("layernorm", "needs rank >= 1");
  const std::int64_t d = x.dim(-1);
  if ((gamma.defined() && gamma.shape() != Shape{d}) ||
      (beta.defined() && beta.shape() != Shape{d})) {
    shape_fail("layernorm", "affine parameters must have shape [" + std::to_string(d) + "] for input " +
                                shape_str(x.shape()));
  }
  const std::int64_t rows = x.numel() / d;
  auto xv = x.values();
  std::vector<Real> xhat(xv.size());
  std::vector<Real> rstd(static_cast<std::size_t>(rows));
  std::vector<Real> out(xv.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* xr = xv.data() + r * d;
    double mu = 0.0;
    for (std::int64_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(d);
    const Real rs = static_cast<Real>(1.0 / std::sqrt(var + eps));
    rstd[r] = rs;
    for (std::int64_t i = 0; i < d; ++i) {
      const Real h = static_cast<Real>(xr[i] - mu) * rs;
      xhat[r * d + i] = h;
      Real y = h;
      if (gamma.defined()) y *= gamma.values()[i];
      if (beta.defined()) y += beta.values()[i];
      out[r * d + i] = y;
    }
  }
  std::vector<Tensor> inputs{x};
  if (gamma.defined()) inputs.push_back(gamma);
  if (beta.defined()) inputs.push_back(beta);
  return make_result(
      x.shape(), std::move(out), "layernorm", inputs,
      [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), rows, d](
          std::span<const Real>, std::span<const Real> g) mutable {
        Real* gg = gamma.defined() && gamma.requires_grad() ? gamma.mutable_grad().data() : nullptr;
        Real* gbeta = beta.defined() && beta.requires_grad() ? beta.mutable_grad().data() : nullptr;
        Real* gx = x.requires_grad() ? x.mutable_grad().data() : nullptr;
        std::vector<Real> dxhat(static_cast<std::size_t>(d));
        for (std::int64_t r = 0; r < rows; ++r) {
          const Real* gr = g.data() + r * d;
          const Real* hr = xhat.data() + r * d;
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::int64_t i = 0; i < d; ++i) {
            if (gg) gg[i] += gr[i] * hr[i];
            if (gbeta) gbeta[i] += gr[i];
            const Real dh = gamma.defined() ? gr[i] * std::as_const(gamma).values()[i] : gr[i];
            dxhat[i] = dh;
            mean_dh += dh;
            mean_dh_h += dh * hr[i];
          }
          if (!gx) continue;
          mean_dh /= static_cast<double>(d);
          mean_dh_h /= static_cast<double>(d);
          for (std::int64_t i = 0; i < d; ++i) {
            gx[r * d + i] +=
                rstd[r] * static_cast<Real>(dxhat[i] - mean_dh - hr[i] * mean_dh_h);
          }
        }
      });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) shape_fail("softmax", "needs rank >= 1");
  const std::int64_t d = x.dim(-1);
  const std::int64_t rows = x.numel() / d;
  auto xv = x.values();
  std::vector<Real> out(xv.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* xr = xv.data() + r * d;
    Real* yr = out.data() + r * d;
    const Real mx = *std::max_element(xr, xr + d);
    double z = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      z += yr[i];
    }
    const Real inv = static_cast<Real>(1.0 / z);
    for (std::int64_t i = 0; i < d; ++i) yr[i] *= inv;
  }
  return make_result(x.shape(), std::move(out), "softmax", {x},
                     [x, rows, d](std::span<const Real> y, std::span<const Real> g) mutable {
                       auto gx = x.mutable_grad();
                       for (std::int64_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::int64_t i = 0; i < d; ++i) dot += g[r * d + i] * y[r * d + i];
                         for (std::int64_t i = 0; i < d; ++i) {
                           gx[r * d + i] += y[r * d + i] * static_cast<Real>(g[r * d + i] - dot);
                         }
                       }
                     });
}

Tensor gelu(const Tensor& x) {
  static constexpr Real kInvSqrt2 = Real(0.70710678118654752440);
  static constexpr Real kInvSqrt2Pi = Real(0.39894228040143267794);
  const auto n = static_cast<Eigen::Index>(x.numel());
  std::vector<Real> out(static_cast<std::size_t>(n));
  const ConstArrMap xv(x.values().data(), n);
  ArrMap(out.data(), n) = Real(0.5) * xv * (Real(1) + (xv * kInvSqrt2).erf());
  return make_result(x.shape(), std::move(out), "gelu", {x},
                     [x](std::span<const Real>, std::span<const Real> g) mutable {
                       const auto n = static_cast<Eigen::Index>(g.size());
                       const ConstArrMap xv(std::as_const(x).values().data(), n);
                       const ConstArrMap gv(g.data(), n);
                       ArrMap(x.mutable_grad().data(), n) +=
                           gv * (Real(0.5) * (Real(1) + (xv * kInvSqrt2).erf()) +
                                 kInvSqrt2Pi * xv * (Real(-0.5) * xv.square()).exp());
                     });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](Real v) { return v > 0.0f ? v : 0.0f; },
      [](Real v, Real) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](Real v) {
        return v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
      },
      [](Real, Real y) { return y * (1.0f - y); });
}

Tensor smooth_l1(const Tensor& x, Real delta) {
  if (!(delta > 0)) throw std::invalid_argument("smooth_l1: delta must be positive");
  return unary(
      x, "smooth_l1",
      [delta](Real v) {
        const Real a = std::abs(v);
        return a < delta ? Real(0.5) * v * v / delta : a - Real(0.5) * delta;
      },
      [delta](Real v, Real) {
        if (std::abs(v) < delta) return v / delta;
        return v > 0 ? Real(1) : Real(-1);
      });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (Real v : x.values()) s += v;
  return make_result(Shape{}, {static_cast<Real>(s)}, "sum", {x},
                     [x](std::span<const Real>, std::span<const Real> g) mutable {
                       for (Real& v : x.mutable_grad()) v += g[0];
                     });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) shape_fail("mean", "empty tensor");
  return scale(sum(x), 1.0f / static_cast<Real>(x.numel()));
}

Tensor sum_axis(const Tensor& x, int axis) {
  axis = normalize_axis("sum_axis", axis, x.rank());
  const AxisView v = axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + axis);
  std::vector<Real> out(static_cast<std::size_t>(v.outer * v.inner), 0.0f);
  auto xv = x.values();
  for (std::int64_t o = 0; o < v.outer; ++o) {
    for (std::int64_t e = 0; e < v.extent; ++e) {
      const Real* src = xv.data() + (o * v.extent + e) * v.inner;
      Real* dst = out.data() + o * v.inner;
      for (std::int64_t i = 0; i < v.inner; ++i) dst[i] += src[i];
    }
  }
  return make_result(std::move(out_shape), std::move(out), "sum_axis", {x},
                     [x, v](std::span<const Real>, std::span<const Real> g) mutable {
                       auto gx = x.mutable_grad();
                       for (std::int64_t o = 0; o < v.outer; ++o)
                         for (std::int64_t e = 0; e < v.extent; ++e)
                           for (std::int64_t i = 0; i < v.inner; ++i)
                             gx[(o * v.extent + e) * v.inner + i] += g[o * v.inner + i];
                     });
}

Tensor mean_axis(const Tensor& x, int axis) {
  const std::int64_t n = x.dim(axis);
  if (n == 0) shape_fail("mean_axis", "empty axis in " + shape_str(x.shape()));
  return scale(sum_axis(x, axis), 1.0f / static_cast<Real>(n));
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) shape_fail("concat", "no inputs");
  const int rank = parts.front().rank();
  axis = normalize_axis("concat", axis, rank);
  Shape out_shape = parts.front().shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (static_cast<int>(s.size()) != rank) {
      shape_fail("concat", "rank mismatch " + shape_str(parts.front().shape()) + " vs " + shape_str(s));
    }
    for (int i = 0; i < rank; ++i) {
      if (i != axis && s[i] != parts.front().shape()[i]) {
        shape_fail("concat", "shape mismatch " + shape_str(parts.front().shape()) + " vs " +
                                 shape_str(s) + " along axis " + std::to_string(axis));
      }
    }
    out_shape[axis] += s[axis];
  }
  const AxisView ov = axis_view(out_shape, axis);
  std::vector<Real> out(static_cast<std::size_t>(numel_of(out_shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const AxisView pv = axis_view(p.shape(), axis);
    auto src = p.values();
    for (std::int64_t o = 0; o < pv.outer; ++o) {
      std::copy_n(src.data() + o * pv.extent * pv.inner, pv.extent * pv.inner,
                  out.data() + (o * ov.extent + offset) * ov.inner);
    }
    offsets.push_back(offset);
    offset += pv.extent;
  }
  return make_result(std::move(out_shape), std::move(out), "concat", parts,
                     [parts, offsets, axis, ov](std::span<const Real>,
                                                std::span<const Real> g) mutable {
                       for (std::size_t k = 0; k < parts.size(); ++k) {
                         const Tensor& p = parts[k];
                         if (!p.requires_grad()) continue;
                         const AxisView pv = axis_view(p.shape(), axis);
                         auto gp = p.mutable_grad();
                         for (std::int64_t o = 0; o < pv.outer; ++o) {
                           const Real* src = g.data() + (o * ov.extent + offsets[k]) * ov.inner;
                           Real* dst = gp.data() + o * pv.extent * pv.inner;
                           for (std::int64_t i = 0; i < pv.extent * pv.inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  axis = normalize_axis("slice", axis, x.rank());
  if (start < 0 || length < 0 || start + length > x.dim(axis)) {
    shape_fail("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                            ") outside axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisView v = axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<Real> out(static_cast<std::size_t>(numel_of(out_shape)));
  auto xv = x.values();
  for (std::int64_t o = 0; o < v.outer; ++o) {
    std::copy_n(xv.data() + (o * v.extent + start) * v.inner, length * v.inner,
                out.data() + o * length * v.inner);
  }
  return make_result(std::move(out_shape), std::move(out), "slice", {x},
                     [x, v, start, length](std::span<const Real>, std::span<const Real> g) mutable {
                       auto gx = x.mutable_grad();
                       for (std::int64_t o = 0; o < v.outer; ++o) {
                         Real* dst = gx.data() + (o * v.extent + start) * v.inner;
                         const Real* src = g.data() + o * length * v.inner;
                         for (std::int64_t i = 0; i < length * v.inner; ++i) dst[i] += src[i];
                       }
                     });
}

std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<std::int64_t>& sizes) {
  axis = normalize_axis("split", axis, x.rank());
  const std::int64_t total = std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0});
  if (total != x.dim(axis)) {
    shape_fail("split", "sizes sum to " + std::to_string(total) + " but axis has " +
                            std::to_string(x.dim(axis)));
  }
  std::vector<Tensor> parts;
  std::int64_t start = 0;
  for (auto s : sizes) {
    parts.push_back(slice(x, axis, start, s));
    start += s;
  }
  return parts;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    shape_fail("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<Real> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), "reshape", {x},
                     [x](std::span<const Real>, std::span<const Real> g) mutable {
                       auto gx = x.mutable_grad();
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                     });
}

Tensor permute(const Tensor& x, const std::vector<int>& order) {
  const int rank = x.rank();
  std::vector<int> check = order;
  std::sort(check.begin(), check.end());
  for (int i = 0; i < rank; ++i) {
    if (static_cast<int>(check.size()) != rank || check[i] != i) {
      shape_fail("permute", "order is not a permutation of the axes of " + shape_str(x.shape()));
    }
  }
  const Shape& in = x.shape();
  Shape out_shape(rank);
  for (int i = 0; i < rank; ++i) out_shape[i] = in[order[i]];
  std::vector<std::int64_t> in_strides(rank, 1);
  for (int i = rank - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in[i + 1];
  // source offset for each output element, walking the output in order
  const std::int64_t n = x.numel();
  std::vector<std::int64_t> src(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(rank, 0);
  for (std::int64_t linear = 0; linear < n; ++linear) {
    std::int64_t off = 0;
    for (int i = 0; i < rank; ++i) off += idx[i] * in_strides[order[i]];
    src[linear] = off;
    for (int i = rank - 1; i >= 0; --i) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  auto xv = x.values();
  std::vector<Real> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out[i] = xv[src[i]];
  return make_result(std::move(out_shape), std::move(out), "permute", {x},
                     [x, src = std::move(src)](std::span<const Real>,
                                               std::span<const Real> g) mutable {
                       auto gx = x.mutable_grad();
                       for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += g[i];
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> rows) {
  if (x.rank() < 1) shape_fail("gather_rows", "needs rank >= 1");
  const std::int64_t n = x.dim(0);
  const std::int64_t width = n ? x.numel() / n : 0;
  for (auto r : rows) {
    if (r < 0 || r >= n) {
      shape_fail("gather_rows", "row " + std::to_string(r) + " outside " + shape_str(x.shape()));
    }
  }
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<std::int64_t>(rows.size());
  std::vector<Real> out(static_cast<std::size_t>(numel_of(out_shape)));
  auto xv = x.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(xv.data() + rows[i] * width, width, out.data() + i * width);
  }
  std::vector<std::int64_t> saved(rows.begin(), rows.end());
  return make_result(std::move(out_shape), std::move(out), "gather_rows", {x},
                     [x, saved, width](std::span<const Real>, std::span<const Real> g) mutable {
                       auto gx = x.mutable_grad();
                       for (std::size_t i = 0; i < saved.size(); ++i)
                         for (std::int64_t j = 0; j < width; ++j)
                           gx[saved[i] * width + j] += g[i * width + j];
                     });
}

Tensor merge_rows(const Tensor& present, std::span<const std::int64_t> rows,
                  const Tensor& fallback, std::int64_t n_rows) {
  if (fallback.rank() != 1) shape_fail("merge_rows", "fallback must be 1-D");
  const std::int64_t d = fallback.dim(0);
  if (present.rank() != 2 || present.dim(0) != static_cast<std::int64_t>(rows.size()) ||
      present.dim(1) != d) {
    shape_fail("merge_rows", "present " + shape_str(present.shape()) + " does not match " +
                                 std::to_string(rows.size()) + " rows of width " + std::to_string(d));
  }
  std::vector<std::int64_t> source(static_cast<std::size_t>(n_rows), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= n_rows || source[rows[i]] != -1) {
      shape_fail("merge_rows", "invalid or repeated row " + std::to_string(rows[i]));
    }
    source[rows[i]] = static_cast<std::int64_t>(i);
  }
  auto pv = present.values();
  auto fv = fallback.values();
  std::vector<Real> out(static_cast<std::size_t>(n_rows * d));
  for (std::int64_t r = 0; r < n_rows; ++r) {
    const Real* src = source[r] >= 0 ? pv.data() + source[r] * d : fv.data();
    std::copy_n(src, d, out.data() + r * d);
  }
  return make_result(Shape{n_rows, d}, std::move(out), "merge_rows", {present, fallback},
                     [present, fallback, source, d](std::span<const Real>,
                                                    std::span<const Real> g) mutable {
                       Real* gp = present.requires_grad() ? present.mutable_grad().data() : nullptr;
                       Real* gf = fallback.requires_grad() ? fallback.mutable_grad().data() : nullptr;
                       for (std::size_t r = 0; r < source.size(); ++r) {
                         Real* dst = source[r] >= 0 ? gp ? gp + source[r] * d : nullptr : gf;
                         if (!dst) continue;
                         for (std::int64_t j = 0; j < d; ++j) dst[j] += g[r * d + j];
                       }
                     });
}

}  // namespace emofuse::ops
