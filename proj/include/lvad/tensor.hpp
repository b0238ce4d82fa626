#pragma once

// Dense row-major tensor with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations on tensors that
// require gradients record their parents and a backward closure on the
// result node; `backward(loss)` walks that recorded graph in reverse
// topological order, accumulates gradients into every node that requires
// them and then releases the recorded closures.

#include <algorithm>
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

#include "lvad/errors.hpp"

namespace lvad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

class Tensor {
public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (auto extent : shape) {
      if (extent == 0) throw DimensionError("tensor: zero extent in shape " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                           std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({}, {value}, requires_grad);
  }

  static Tensor vector(std::vector<double> values, bool requires_grad = false) {
    auto n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false) {
    std::vector<double> values;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& row : rows) {
      if (row.size() != cols) throw DimensionError("tensor: ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({rows.size(), cols}, std::move(values), requires_grad);
  }

  static Tensor identity(std::size_t n) {
    auto t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.node_->data[i * n + i] = 1.0;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::size_t rows() const {
    require_rank2("rows");
    return node_->shape[0];
  }
  std::size_t cols() const {
    require_rank2("cols");
    return node_->shape[1];
  }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access, for initialisation and optimiser updates only.
  std::span<double> mutable_data() { return node_->data; }

  double item() const {
    if (numel() != 1) throw ContractError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double operator()(std::size_t r, std::size_t c) const { return node_->data[r * node_->shape[1] + c]; }

  std::vector<double> row(std::size_t r) const {
    auto c = cols();
    return {node_->data.begin() + static_cast<std::ptrdiff_t>(r * c),
            node_->data.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)};
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; all zeros when nothing has been accumulated yet.
  std::vector<double> grad() const {
    return has_grad() ? node_->grad : std::vector<double>(numel(), 0.0);
  }
  void zero_grad() { node_->grad.clear(); }
  const std::string& op() const { return node_->op; }

  /// Copy of the values with no graph attached.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Internal hook used by the op implementations.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
  void require_rank2(const char* what) const {
    if (rank() != 2) throw DimensionError(std::string(what) + ": tensor of shape " + shape_str(shape()) + " is not a matrix");
  }

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Builds an op result; the backward closure is kept only when some input
/// participates in differentiation and recording is enabled.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward_fn) {
  Tensor out(std::move(shape), std::move(data), false);
  auto& node = *out.node();
  node.op = op;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any && grad_mode()) {
    node.requires_grad = true;
    for (const auto& in : inputs) node.parents.push_back(in.node());
    node.backward_fn = std::move(backward_fn);
  }
  return out;
}

/// Reverse topological order of the recorded graph reachable from `root`.
inline std::vector<Node*> reverse_topological(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

}  // namespace detail

/// Accumulates d(loss)/d(node) into every reachable node that requires
/// gradients, then releases the recorded graph.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  auto* root = loss.node().get();
  if (!root->requires_grad || !root->backward_fn) {
    throw ContractError("backward: nothing was recorded for this loss");
  }
  auto order = detail::reverse_topological(root);
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto* node : order) {
    if (node->backward_fn) node->backward_fn(*node);
  }
  // Parents are released only after every node has been visited.
  std::vector<std::shared_ptr<detail::Node>> released;
  for (auto* node : order) {
    if (node->backward_fn) {
      node->backward_fn = nullptr;
      for (auto& p : node->parents) released.push_back(std::move(p));
      node->parents.clear();
    }
  }
}

/// Name of the first recorded tensor (in evaluation order) holding a
/// non-finite value, or an empty string. Used for training diagnostics.
inline std::string first_nonfinite(const Tensor& root) {
  auto order = detail::reverse_topological(root.node().get());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    for (double v : (*it)->data) {
      if (!std::isfinite(v)) return (*it)->op + shape_str((*it)->shape);
    }
  }
  return {};
}

}  // namespace lvad
