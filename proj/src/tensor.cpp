#include "emofuse/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace emofuse {

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void check_finite(std::span<const Real> values, const char* op) {
  using Arr = Eigen::Array<Real, Eigen::Dynamic, 1>;
  if (Eigen::Map<const Arr>(values.data(), static_cast<Eigen::Index>(values.size())).allFinite()) return;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << "non-finite value " << values[i] << " produced by " << op << " at index " << i;
      throw NonFiniteError(os.str());
    }
  }
}

Tensor::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(static_cast<std::size_t>(numel_of(shape)), 0.0f);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<Real> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (static_cast<std::int64_t>(values.size()) != numel_of(shape)) {
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                     shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->shape;
}

std::int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(node_->value.size()); }

std::span<Real> Tensor::values() { return node_->value; }
std::span<const Real> Tensor::values() const { return node_->value; }

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::span<const Real> Tensor::grad() const { return node_->grad; }

std::span<Real> Tensor::mutable_grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0f);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

const char* Tensor::op_name() const { return node_->op; }

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value, false); }
Tensor Tensor::clone() const { return Tensor(node_->shape, node_->value, node_->requires_grad); }

void Tensor::backward() {
  if (numel() != 1) throw ShapeError("backward() needs a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS for a topological order of the recorded graph.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  mutable_grad()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(n->value, n->grad);
  }
}

namespace {

template <typename Range>
Tensor build_result(Shape shape, std::vector<Real> values, const char* op, const Range& inputs,
                    BackwardFn backward) {
#if EMOFUSE_CHECKED
  check_finite(values, op);
#endif
  Tensor out(std::move(shape), std::move(values), false);
  auto& node = *out.node();
  node.op = op;
  bool any = false;
  for (const Tensor& in : inputs) any = any || in.requires_grad();
  if (any) {
    node.requires_grad = true;
    for (const Tensor& in : inputs) {
      if (in.requires_grad()) node.parents.push_back(in.node());
    }
    node.backward = std::move(backward);
  }
  return out;
}

}  // namespace

Tensor make_result(Shape shape, std::vector<Real> values, const char* op,
                   std::initializer_list<Tensor> inputs, BackwardFn backward) {
  return build_result(std::move(shape), std::move(values), op, inputs, std::move(backward));
}

Tensor make_result(Shape shape, std::vector<Real> values, const char* op,
                   const std::vector<Tensor>& inputs, BackwardFn backward) {
  return build_result(std::move(shape), std::move(values), op, inputs, std::move(backward));
}

Tensor ParameterSet::add(const std::string& name, Tensor tensor, bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  tensor.set_requires_grad(trainable);
  index_[name] = params_.size();
  params_.push_back(Parameter{name, tensor, trainable});
  return tensor;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Parameter* ParameterSet::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter& ParameterSet::at(const std::string& name) const {
  const Parameter* p = find(name);
  if (!p) throw std::out_of_range("no parameter named " + name);
  return *p;
}

std::int64_t ParameterSet::total_elements() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace emofuse
