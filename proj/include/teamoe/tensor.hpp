// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with reverse-mode automatic differentiation.
//
// A BasicTensor is a cheap, copyable handle onto a shared node holding a
// row-major value buffer, an optional gradient buffer, and (for results of
// differentiable operations) references to its inputs plus a backward rule.
// Every node receives a monotonically increasing sequence number when it is
// created; the Tape replays backward rules in reverse sequence order, which is
// exactly the reverse recording order of the forward pass.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace teamoe {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Operand shapes do not fit the operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN or infinite values where finite ones are required.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A caller broke an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid configuration value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Labels or ids outside the range their consumer accepts.
class DataError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

/// Storage geometry: rank 0 and rank 1 live in a single row; higher ranks
/// flatten everything after the leading dimension into columns.
inline std::pair<Index, Index> storage_dims(const Shape& shape) {
  if (shape.empty()) return {1, 1};
  if (shape.size() == 1) return {1, shape[0]};
  return {shape[0], shape_numel(shape) / shape[0]};
}

namespace detail {

inline std::atomic<std::uint64_t>& sequence_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

template <typename Scalar>
struct TensorNode;

/// Backward rule: receives the gradient of the loss with respect to the node's
/// output and accumulates into the gradient slots of its inputs. A slot is
/// null when that input does not require gradient.
template <typename Scalar>
using BackwardFn =
    std::function<void(const RowMatrix<Scalar>& upstream, std::vector<RowMatrix<Scalar>*>& input_grads)>;

template <typename Scalar>
struct TensorNode {
  Shape shape;
  RowMatrix<Scalar> value;
  RowMatrix<Scalar> grad;  // size 0 until populated
  bool requires_grad = false;
  std::uint64_t seq = detail::sequence_counter().fetch_add(1, std::memory_order_relaxed);
  std::vector<std::shared_ptr<TensorNode>> inputs;
  BackwardFn<Scalar> backward;
};

template <typename Scalar>
class BasicTensor {
 public:
  using Matrix = RowMatrix<Scalar>;
  using Node = TensorNode<Scalar>;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    check_shape(shape);
    auto [rows, cols] = storage_dims(shape);
    return BasicTensor(std::move(shape), Matrix::Zero(rows, cols), requires_grad);
  }

  static BasicTensor full(Shape shape, Scalar fill, bool requires_grad = false) {
    check_shape(shape);
    auto [rows, cols] = storage_dims(shape);
    return BasicTensor(std::move(shape), Matrix::Constant(rows, cols, fill), requires_grad);
  }

  /// Row-major data in, shape checked against its length.
  static BasicTensor from_data(Shape shape, const std::vector<Scalar>& data, bool requires_grad = false) {
    check_shape(shape);
    if (static_cast<Index>(data.size()) != shape_numel(shape)) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                           shape_str(shape));
    }
    auto [rows, cols] = storage_dims(shape);
    Matrix m = Eigen::Map<const Matrix>(data.data(), rows, cols);
    return BasicTensor(std::move(shape), std::move(m), requires_grad);
  }

  static BasicTensor from_matrix(const Matrix& m, bool requires_grad = false) {
    return BasicTensor(Shape{m.rows(), m.cols()}, m, requires_grad);
  }

  static BasicTensor from_vector(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& v, bool requires_grad = false) {
    return BasicTensor(Shape{v.size()}, v.transpose(), requires_grad);
  }

  static BasicTensor scalar(Scalar s, bool requires_grad = false) {
    return BasicTensor(Shape{}, Matrix::Constant(1, 1, s), requires_grad);
  }

  /// Internal constructor for operation results; prefer the factories.
  BasicTensor(Shape shape, Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
    auto [rows, cols] = storage_dims(shape);
    if (value.rows() != rows || value.cols() != cols) {
      throw DimensionError("storage " + std::to_string(value.rows()) + "x" + std::to_string(value.cols()) +
                           " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  Index rank() const { return static_cast<Index>(node().shape.size()); }
  Index numel() const { return node().value.size(); }
  Index dim(Index i) const { return node().shape.at(static_cast<std::size_t>(i)); }
  bool is_scalar() const { return numel() == 1; }

  const Matrix& value() const { return node().value; }
  /// In-place write access for optimizers and perturbation oracles. Never
  /// mutate a tensor whose value a pending backward pass still depends on.
  Matrix& mutable_value() { return node().value; }

  Scalar item() const {
    if (!is_scalar()) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node().value(0, 0);
  }
  /// Flat row-major element access.
  Scalar at(Index i) const { return node().value.data()[i]; }

  std::vector<Scalar> to_vector() const {
    const Matrix& v = node().value;
    return std::vector<Scalar>(v.data(), v.data() + v.size());
  }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool flag) {
    node().requires_grad = flag;
    if (!flag) node().grad.resize(0, 0);
  }

  bool has_grad() const { return node().grad.size() != 0; }
  const Matrix& grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient");
    return node().grad;
  }
  void zero_grad() { node().grad.resize(0, 0); }

  /// Identity of the underlying node.
  const Node* id() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  /// Fresh leaf holding a copy of the value; shares nothing with this tensor.
  BasicTensor clone(bool requires_grad) const { return BasicTensor(shape(), value(), requires_grad); }
  /// Same value, cut from the graph, no gradient.
  BasicTensor detach() const { return clone(false); }

 private:
  Node& node() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return *node_;
  }

  static void check_shape(const Shape& shape) {
    for (Index d : shape) {
      if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    }
  }

  std::shared_ptr<Node> node_;
};

/// Disables recording on the current thread for its lifetime; results of
/// operations are plain constants. Used for evaluation passes.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds the result of a differentiable operation. The result records its
/// inputs and backward rule only when some input requires gradient, so
/// computations over frozen tensors leave no trace on the tape.
template <typename Scalar>
BasicTensor<Scalar> record(Shape shape, RowMatrix<Scalar> value, std::vector<BasicTensor<Scalar>> inputs,
                           BackwardFn<Scalar> backward) {
  bool any = detail::grad_mode() &&
             std::any_of(inputs.begin(), inputs.end(), [](const auto& t) { return t.requires_grad(); });
  BasicTensor<Scalar> out(std::move(shape), std::move(value), any);
  if (any) {
    auto& node = *out.node_ptr();
    node.inputs.reserve(inputs.size());
    for (auto& in : inputs) node.inputs.push_back(in.node_ptr());
    node.backward = std::move(backward);
  }
  return out;
}

/// Ordered record of the operations reachable from a root tensor.
template <typename Scalar>
class BasicTape {
 public:
  using Node = TensorNode<Scalar>;

  /// Collects every gradient-carrying node reachable from `root`, in the
  /// order the forward pass created them.
  static BasicTape collect(const BasicTensor<Scalar>& root) {
    BasicTape tape;
    std::vector<Node*> stack{root.node_ptr().get()};
    std::unordered_set<Node*> seen;
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      if (!n->requires_grad || !seen.insert(n).second) continue;
      tape.entries_.push_back(n);
      for (auto& in : n->inputs) stack.push_back(in.get());
    }
    std::sort(tape.entries_.begin(), tape.entries_.end(),
              [](const Node* a, const Node* b) { return a->seq < b->seq; });
    return tape;
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Node*>& entries() const { return entries_; }

  /// Replays backward rules from the last entry (the root) to the first,
  /// seeding the root with `seed`. Gradients accumulate into every
  /// requires_grad node's persistent grad buffer; propagation itself uses
  /// per-replay buffers so repeated replays add exactly one more gradient.
  void replay(const RowMatrix<Scalar>& seed) const {
    if (entries_.empty()) return;
    std::unordered_map<const Node*, RowMatrix<Scalar>> pending;
    pending.emplace(entries_.back(), seed);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      Node* n = *it;
      auto found = pending.find(n);
      if (found == pending.end()) continue;
      RowMatrix<Scalar> upstream = std::move(found->second);
      pending.erase(found);

      if (n->grad.size() == 0) {
        n->grad = upstream;
      } else {
        n->grad += upstream;
      }
      if (!n->backward) continue;

      std::vector<RowMatrix<Scalar>*> slots(n->inputs.size(), nullptr);
      for (std::size_t i = 0; i < n->inputs.size(); ++i) {
        Node* in = n->inputs[i].get();
        if (!in->requires_grad) continue;
        auto [slot, inserted] = pending.try_emplace(in);
        if (inserted) slot->second = RowMatrix<Scalar>::Zero(in->value.rows(), in->value.cols());
        slots[i] = &slot->second;
      }
      n->backward(upstream, slots);
    }
  }

 private:
  std::vector<Node*> entries_;
};

/// Reverse-mode sweep from a scalar loss; gradients accumulate across calls
/// until zero_grad().
template <typename Scalar>
void backward(const BasicTensor<Scalar>& loss) {
  if (!loss.is_scalar()) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss that is not connected to any trainable tensor");
  }
  BasicTape<Scalar>::collect(loss).replay(RowMatrix<Scalar>::Ones(1, 1));
}

using Tensor = BasicTensor<double>;
using Tape = BasicTape<double>;
using Matrix = RowMatrix<double>;

}  // namespace teamoe
