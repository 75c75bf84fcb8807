#pragma once

#include "gaitasms/tensor.hpp"

#include <deque>
#include <functional>
#include <initializer_list>
#include <vector>

namespace gaitasms {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  Index extent(Index axis) const { return value().extent(axis); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Linear record of executed operations. Nodes are appended in execution
/// order, so reverse iteration is a valid topological order for backward.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  /// (tape, forward output, gradient w.r.t. that output)
  using BackwardFn = std::function<void(Tape&, const TensorT&, const TensorT&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(TensorT value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), TensorT{}, requires_grad, {}});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  Var<Scalar> constant(TensorT value) { return leaf(std::move(value), false); }

  /// Appends an op result. The gradient rule is kept only when one of the
  /// inputs needs a gradient.
  Var<Scalar> record(TensorT value, std::initializer_list<Var<Scalar>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || requires_grad(v.id());
    return record_if(std::move(value), needs, std::move(fn));
  }

  Var<Scalar> record_if(TensorT value, bool needs_grad, BackwardFn fn) {
    if (check_finite_ && !value.all_finite()) nonfinite_ = true;
    nodes_.push_back(Node{std::move(value), TensorT{}, needs_grad, needs_grad ? std::move(fn) : BackwardFn{}});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  const TensorT& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// True when some recorded forward value contained NaN/Inf.
  bool saw_nonfinite() const { return nonfinite_; }
  /// Scanning every recorded value costs a full pass over each activation;
  /// the trainer turns it off and checks the loss and gradients instead.
  void set_finite_check(bool on) { check_finite_ = on; }

  bool has_grad(const Var<Scalar>& v) const { return !nodes_.at(v.id()).grad.empty(); }

  /// Gradient of the last backward() target w.r.t. leaf v; zeros if v did not
  /// contribute. Gradients of op results are released during backward().
  TensorT grad(const Var<Scalar>& v) const {
    const Node& n = nodes_.at(v.id());
    if (n.grad.empty()) return TensorT::zeros(n.value.shape());
    return n.grad;
  }

  /// Adds g into the gradient slot of node id (no-op for non-differentiable nodes).
  template <typename Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = TensorT(n.value.shape(), g);
    } else {
      n.grad.array() += g;
    }
  }

  /// Mutable gradient buffer for kernels that scatter into it directly.
  TensorT& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = TensorT(n.value.shape());
    return n.grad;
  }

  void backward(const Var<Scalar>& loss) {
    if (loss.value().size() != 1)
      throw ShapeError("backward requires a scalar loss, got " + shape_string(loss.shape()));
    for (auto& n : nodes_) n.grad = TensorT{};
    Node& root = nodes_[loss.id()];
    root.grad = TensorT::constant(root.value.shape(), Scalar(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.value, n.grad);
      n.grad = TensorT{};  // only leaf gradients are kept
    }
  }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;  // stable addresses: value() references survive later ops
  bool check_finite_ = true;
  bool nonfinite_ = false;
};

}  // namespace gaitasms
