#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dualformer/error.hpp"

namespace dualformer {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

// One vertex of the dynamically built differentiation graph. Leaves have no
// parents; interior nodes carry a rule that pushes `grad` into their parents.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty() && !backward; }

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense row-major array of doubles with optional gradient tracking.
//
// Copies share the underlying storage, the way graph handles do in every
// reverse-mode engine; use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape.empty()) shape = {1};
    for (auto e : shape)
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    if (shape_size(shape) != data.size())
      throw DimensionError("shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  static Tensor vector(std::vector<double> values, bool requires_grad = false) {
    auto n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false) {
    std::vector<double> data;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(data), requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(data), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t rows() const { return rank() == 1 ? 1 : dim(0); }
  std::size_t cols() const { return rank() == 1 ? dim(0) : dim(1); }

  std::span<const double> data() const { return node_->data; }
  // Direct write access. Only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data() { return node_->data; }
  const std::vector<double>& values() const { return node_->data; }

  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return node_->is_leaf(); }
  const char* op_name() const { return node_->op; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient buffer; all zeros when nothing has been accumulated yet.
  std::vector<double> grad() const {
    return has_grad() ? node_->grad : std::vector<double>(size(), 0.0);
  }
  void zero_grad() { node_->grad.clear(); }

  // Same values, fresh leaf, no history.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }
  Tensor clone() const { return Tensor(shape(), node_->data, requires_grad()); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph construction on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : saved_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = saved_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
}

// Builds the result of an op. The backward rule is attached only when some
// input participates in differentiation.
inline Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                          const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward) {
  check_finite(data, op);
  Tensor out(std::move(shape), std::move(data));
  auto& node = *out.node();
  node.op = op;
  bool track = false;
  if (grad_mode())
    for (const auto& in : inputs) track = track || in.requires_grad();
  if (track) {
    node.requires_grad = true;
    for (const auto& in : inputs) node.parents.push_back(in.node());
    node.backward = std::move(backward);
  }
  return out;
}

// Gradient sink of parent `i`, or nullptr when that parent is a constant.
inline std::vector<double>* parent_grad(Node& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

}  // namespace detail

// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls
// until zero_grad(); interior nodes are released afterwards.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad())
    throw ContractError("backward() on a loss that is not connected to any differentiable input");

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (auto* node : order) {
    if (node->is_leaf()) continue;
    node->backward = nullptr;
    node->parents.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

}  // namespace dualformer
