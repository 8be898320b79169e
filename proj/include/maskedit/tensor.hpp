#pragma once

// Dense double-precision tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle onto a graph node.  Operations on tensors that
// require gradients record their inputs and a backward closure; calling
// backward() on a scalar result propagates gradients to every leaf that
// requires them.  Values of non-leaf tensors are immutable.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace maskedit {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // lazily sized
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  // Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  // Negative indices count from the back.
  int dim(int i) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Mutable access is reserved for leaves (parameters, inputs).
  std::span<double> mutable_values();
  std::span<const double> grad() const;
  bool has_grad() const;
  double item() const;
  double at(std::initializer_list<int> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  void zero_grad();
  Tensor detach() const;

  // Seeds d(self)/d(self) = 1; self must hold one element.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
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

// Builds an op result.  When recording is on and any input requires a
// gradient, the result keeps the inputs alive and runs `backward` during
// propagation; otherwise `backward` is dropped.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   BackwardFn backward);

// Accumulation target for input i, or nullptr when it needs no gradient.
double* grad_target(Node& self, std::size_t input);

}  // namespace detail

}  // namespace maskedit
