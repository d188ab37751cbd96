#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#ifndef EMOFUSE_REAL
#define EMOFUSE_REAL float
#endif

namespace emofuse {

// Scalar type of every tensor. float32 unless the library is built with
// EMOFUSE_REAL=double (used by the high-precision gradient-check build).
using Real = EMOFUSE_REAL;

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration value; the message names the field path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Receives the op output's values and the gradient flowing into it.
using BackwardFn =
    std::function<void(std::span<const Real> out_value, std::span<const Real> out_grad)>;

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

/// Reference-counted handle to a value in the autograd graph.
///
/// Copies share storage. Ops in `emofuse::ops` record a backward closure on
/// their result whenever any input requires a gradient; `backward()` on a
/// scalar result walks the recorded graph in reverse topological order and
/// accumulates into every reachable tensor that requires a gradient.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);

  static Tensor scalar(Real v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const;

  std::span<Real> values();
  std::span<const Real> values() const;
  Real item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const Real> grad() const;
  // Allocates a zeroed gradient buffer on first use.
  std::span<Real> mutable_grad() const;
  void zero_grad();

  void backward();

  // Same values, no history, no gradient requirement.
  Tensor detach() const;
  Tensor clone() const;

  const char* op_name() const;
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<Real>, const char*, std::initializer_list<Tensor>,
                            BackwardFn);
  friend Tensor make_result(Shape, std::vector<Real>, const char*, const std::vector<Tensor>&,
                            BackwardFn);

  std::shared_ptr<detail::Node> node_;
};

/// Creates an op output. History is only recorded when an input requires a
/// gradient. In checked builds the output values are validated as finite.
Tensor make_result(Shape shape, std::vector<Real> values, const char* op,
                   std::initializer_list<Tensor> inputs, BackwardFn backward);
Tensor make_result(Shape shape, std::vector<Real> values, const char* op,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

void check_finite(std::span<const Real> values, const char* op);

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

/// Named parameters of one model. Names are unique; insertion order is kept
/// so that iteration (and therefore optimizer updates) is deterministic.
class ParameterSet {
 public:
  Tensor add(const std::string& name, Tensor tensor, bool trainable = true);
  const Parameter* find(const std::string& name) const;
  Parameter* find(const std::string& name);
  const Parameter& at(const std::string& name) const;

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::int64_t total_elements() const;

  void zero_grad();

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace emofuse
