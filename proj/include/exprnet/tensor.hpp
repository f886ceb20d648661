#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "exprnet/error.hpp"

namespace exprnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

enum class Mode { train, eval };

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else return "f64";
}

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  // Empty means "no gradient yet"; extents are always positive so a real
  // gradient buffer is never empty.
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(TensorNode&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
  }
};

/// Dense row-major tensor with an optional gradient slot. Copies share the
/// underlying storage; use clone() for a deep copy.
template <typename T>
class Tensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "Tensor supports binary32 and binary64 only");

 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : node_(std::make_shared<Node>()) {
    validate_shape(shape);
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node>()) {
    validate_shape(shape);
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  /// Builds the result of a differentiable op. The graph edge is recorded only
  /// when grad mode is on and some input requires a gradient.
  static Tensor from_op(Shape shape, std::vector<T> values, std::vector<std::shared_ptr<Node>> inputs,
                        std::function<void(Node&)> backward_fn) {
    Tensor out(std::move(shape), std::move(values));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in->requires_grad;
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->inputs = std::move(inputs);
    out.node_->backward_fn = std::move(backward_fn);
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return checked().shape; }
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t numel() const { return checked().data.size(); }

  std::span<const T> data() const { return checked().data; }
  /// Raw write access. Intended for parameter updates and test fixtures; a
  /// tensor that already feeds a recorded graph must not be mutated before
  /// backward has run.
  std::span<T> mutable_data() { return checked().data; }

  T operator[](std::size_t i) const { return checked().data[i]; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return checked().data[0];
  }

  bool requires_grad() const { return checked().requires_grad; }
  Tensor& set_requires_grad(bool on) {
    if (!checked().is_leaf()) throw ValueError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return checked().is_leaf(); }

  bool has_grad() const { return !checked().grad.empty(); }
  std::span<const T> grad() const {
    if (!has_grad()) throw ValueError("tensor has no gradient");
    return node_->grad;
  }
  std::span<T> mutable_grad() { return checked().grad_buffer(); }
  void zero_grad() { checked().grad.assign(node_->data.size(), T{0}); }
  void clear_grad() { checked().grad.clear(); }

  /// Deep copy as a leaf without gradient history.
  Tensor clone() const {
    Tensor out(shape(), std::vector<T>(data().begin(), data().end()));
    out.node_->requires_grad = false;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> values(numel());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<U>(checked().data[i]);
    return Tensor<U>(shape(), std::move(values));
  }

  const std::shared_ptr<Node>& node() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  static void validate_shape(const Shape& shape) {
    for (std::size_t extent : shape) {
      if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
  }

  Node& checked() const {
    if (!node_) throw ValueError("use of an undefined tensor");
    return *node_;
  }

  std::shared_ptr<Node> node_;
};

/// Named trainable tensor. Names are dotted paths over [a-z0-9._].
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

inline bool valid_parameter_name(std::string_view name) {
  if (name.empty() || name.front() == '.' || name.back() == '.') return false;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '.' || c == '_';
    if (!ok) return false;
  }
  return name.find("..") == std::string_view::npos;
}

/// Reverse-mode sweep from a single-element tensor. Leaf gradients accumulate
/// across calls; interior gradients are recomputed on every call.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw ValueError("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) throw ValueError("loss does not depend on any tensor requiring grad");

  using Node = TensorNode<T>;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* node : order) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), T{0});
  }
  Node* root = loss.node().get();
  root->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
}

namespace detail {

template <typename T>
void ensure_finite(std::span<const T> values, const char* op) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

}  // namespace detail

}  // namespace exprnet
