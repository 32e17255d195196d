#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bglab/rng.hpp"

namespace bglab {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

struct TensorImpl;

/// Accumulates the output gradient into the gradient buffers of the inputs.
/// A null entry in `input_grads` means that input does not need a gradient.
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<std::vector<double>*> input_grads)>;

struct Node {
  std::string kind;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty means absent
  std::shared_ptr<Node> node;
};

/// Shared handle to a dense row-major double tensor. Copies alias the same
/// storage; use clone() or detach() for an independent buffer.
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl>()) { impl_->data.assign(1, 0.0); }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                       std::to_string(shape_numel(shape)) + " values but " +
                       std::to_string(values.size()) + " were given");
    }
    Tensor t(std::make_shared<TensorImpl>());
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from({}, {value}, requires_grad);
  }

  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng,
                        bool requires_grad = false) {
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = rng.uniform(lo, hi);
    return from(std::move(shape), std::move(values), requires_grad);
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }

  double item() const {
    if (numel() != 1) {
      throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    }
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
  bool is_leaf() const { return impl_->node == nullptr; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  /// Independent copy of the values that is not connected to any graph.
  Tensor detach() const { return from(shape(), impl_->data, false); }

  /// Independent leaf copy keeping the requires_grad flag.
  Tensor clone() const { return from(shape(), impl_->data, requires_grad()); }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Builds the output of a primitive. The node is recorded only when one of
/// the inputs participates in differentiation.
inline Tensor apply_op(std::string kind, Shape shape, std::vector<double> values,
                       const std::vector<Tensor>& inputs, BackwardFn backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    auto node = std::make_shared<Node>();
    node->kind = std::move(kind);
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::move(backward);
    out.impl()->node = std::move(node);
    out.set_requires_grad(true);
  }
  return out;
}

/// Topologically ordered view of the graph reachable from a root; inputs
/// always precede the tensors computed from them.
struct Tape {
  std::vector<std::shared_ptr<TensorImpl>> order;

  static Tape record(const Tensor& root) {
    Tape tape;
    std::unordered_set<const TensorImpl*> visited;
    // iterative post-order DFS
    std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
    stack.emplace_back(root.impl(), 0);
    visited.insert(root.impl().get());
    while (!stack.empty()) {
      auto& [impl, next] = stack.back();
      const auto* node = impl->node.get();
      if (node && next < node->inputs.size()) {
        auto child = node->inputs[next++];
        if (child->requires_grad && visited.insert(child.get()).second) {
          stack.emplace_back(std::move(child), 0);
        }
        continue;
      }
      tape.order.push_back(impl);
      stack.pop_back();
    }
    return tape;
  }
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; intermediate gradients are rebuilt on every call.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward: loss does not depend on any tensor requiring grad");
  }
  const Tape tape = Tape::record(loss);
  std::unordered_map<const TensorImpl*, std::vector<double>> grads;
  grads[loss.impl().get()] = {1.0};

  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    const auto& impl = *it;
    auto found = grads.find(impl.get());
    if (found == grads.end()) continue;
    if (!impl->node) {
      auto& leaf_grad = impl->grad;
      if (leaf_grad.empty()) leaf_grad.assign(impl->data.size(), 0.0);
      for (std::size_t i = 0; i < leaf_grad.size(); ++i) leaf_grad[i] += found->second[i];
      grads.erase(found);
      continue;
    }
    std::vector<double> grad_out = std::move(found->second);
    grads.erase(found);
    const Node& node = *impl->node;
    std::vector<std::vector<double>*> input_grads(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const auto& in = node.inputs[i];
      if (!in->requires_grad) continue;
      auto& buf = grads[in.get()];
      if (buf.empty()) buf.assign(in->data.size(), 0.0);
      input_grads[i] = &buf;
    }
    node.backward(grad_out, input_grads);
  }
}

}  // namespace bglab
