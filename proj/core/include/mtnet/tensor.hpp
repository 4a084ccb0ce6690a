// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mtnet/errors.hpp"

namespace mtn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `grad` of this node and accumulates into the parents.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major float64 array with an optional reverse-mode gradient.
///
/// Tensor is a shared handle: copies alias the same storage, which is how a
/// ParamStore and the layers that read a parameter stay in sync. Operations in
/// ops.hpp record a backward closure whenever one of their inputs requires a
/// gradient and gradient recording is enabled.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// In-place access for optimizers and finite differences; bypasses the graph.
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  /// Gradient values; zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad();

  /// Backpropagates from a scalar tensor (seed 1).
  void backward() const;
  /// Backpropagates with an explicit seed of the same size as this tensor.
  void backward(std::span<const double> seed) const;

  /// New leaf tensor sharing no storage or history with this one.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Whether new operations record backward closures (thread-local).
bool grad_enabled();

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

using BackwardFn = std::function<void(Node&)>;

/// Builds an operation result. `backward` is attached only when recording is
/// on and at least one input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs, BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   BackwardFn backward);

}  // namespace detail

}  // namespace mtn
