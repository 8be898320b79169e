#include "maskedit/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "maskedit/errors.hpp"

namespace maskedit {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> value) {
  if (value.size() != numel(shape))
    throw ShapeError("value count " + std::to_string(value.size()) + " does not match shape " +
                     to_string(shape));
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw Error("use of an undefined tensor");
  return *node;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = maskedit::numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return Tensor(new_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

int Tensor::dim(int i) const {
  const int r = rank();
  const int idx = i < 0 ? r + i : i;
  if (idx < 0 || idx >= r)
    throw DimensionError("dimension index " + std::to_string(i) + " out of range for shape " +
                         to_string(shape()));
  return shape()[static_cast<std::size_t>(idx)];
}

std::size_t Tensor::numel() const { return checked(node_).value.size(); }

std::span<const double> Tensor::values() const { return checked(node_).value; }

std::span<double> Tensor::mutable_values() {
  checked(node_);
  if (node_->backward) throw Error("cannot mutate the values of a non-leaf tensor");
  return node_->value;
}

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

double Tensor::item() const {
  const auto& n = checked(node_);
  if (n.value.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(n.shape));
  return n.value[0];
}

double Tensor::at(std::initializer_list<int> index) const {
  const auto& n = checked(node_);
  if (index.size() != n.shape.size()) throw ShapeError("index rank mismatch");
  std::size_t offset = 0;
  std::size_t k = 0;
  for (int i : index) {
    if (i < 0 || i >= n.shape[k]) throw DimensionError("index out of range");
    offset = offset * static_cast<std::size_t>(n.shape[k]) + static_cast<std::size_t>(i);
    ++k;
  }
  return n.value[offset];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool on) {
  checked(node_);
  if (node_->backward) throw Error("requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
}

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.clear();
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return from(n.shape, n.value);
}

void Tensor::backward() const {
  const auto& root = checked(node_);
  if (root.value.size() != 1) throw ShapeError("backward() requires a single-element tensor");
  if (!root.requires_grad) return;

  // Iterative post-order DFS; reversed it is a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

namespace detail {

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  auto node = new_node(std::move(shape), std::move(value));
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
      return t.defined() && t.requires_grad();
    });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& t : inputs) node->inputs.push_back(t.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

double* grad_target(Node& self, std::size_t input) {
  Node* in = self.inputs[input].get();
  if (!in || !in->requires_grad) return nullptr;
  return in->grad_buffer().data();
}

}  // namespace detail

}  // namespace maskedit
