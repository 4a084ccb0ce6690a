// SPDX-License-Identifier: Apache-2.0
#include "mtnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace mtn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(s.size()));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->values.size() : 0; }

std::span<const double> Tensor::values() const { return node_->values; }
std::span<double> Tensor::mutable_values() { return node_->values; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range on axis " + std::to_string(axis));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->values[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->values.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->values, false); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw DimensionError("backward() without seed needs a scalar, got " + shape_str(shape()));
  }
  const double one = 1.0;
  backward(std::span<const double>(&one, 1));
}

void Tensor::backward(std::span<const double> seed) const {
  if (seed.size() != numel()) throw DimensionError("backward seed size mismatch");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto& g = node_->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

namespace {

Tensor finish(Shape shape, std::vector<double> values, std::vector<std::shared_ptr<Node>> parents,
              BackwardFn backward) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by tensor operation");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  if (g_grad_enabled && !parents.empty()) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

}  // namespace

Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  std::vector<std::shared_ptr<Node>> parents;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) parents.push_back(t->node());
  }
  return finish(std::move(shape), std::move(values), std::move(parents), std::move(backward));
}

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   BackwardFn backward) {
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& t : inputs) {
    if (t.defined() && t.requires_grad()) parents.push_back(t.node());
  }
  return finish(std::move(shape), std::move(values), std::move(parents), std::move(backward));
}

}  // namespace detail

}  // namespace mtn
