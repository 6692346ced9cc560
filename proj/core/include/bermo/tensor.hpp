#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bermo {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

// One vertex of the dynamically recorded compute graph.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // lazily allocated; empty means all-zero
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  bool is_leaf() const { return !backward; }
  double* grad_data();
};

}  // namespace detail

/// Dense row-major tensor of doubles with an optional gradient accumulator.
///
/// `Tensor` is a shared handle: copies refer to the same storage and graph
/// node, the way parameters are shared between a module and its optimizer.
/// Every op in ops.hpp returns a fresh node and, when gradients are enabled and
/// any operand requires grad, records how to propagate gradients back to the
/// operands.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  /// Mutable access for initializers and optimizers; only meaningful on leaves.
  std::span<double> mutable_data() { return node_->value; }
  double item() const;
  double operator[](std::size_t flat_index) const { return node_->value[flat_index]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient accumulated so far (zeros if nothing has been accumulated).
  std::span<const double> grad() const;
  std::span<double> mutable_grad() { return {node_->grad_data(), node_->value.size()}; }
  void zero_grad() { node_->grad.clear(); }

  /// Reverse-mode sweep from this scalar. Leaves accumulate; interior
  /// gradients are released once propagated.
  void backward() const;

  /// Copy of the value with no graph history.
  Tensor detach() const;

  const char* op_name() const { return node_->op; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Whether ops record graph nodes on this thread.
bool grad_enabled();

/// Disables graph recording for the lifetime of the guard (evaluation paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace bermo
