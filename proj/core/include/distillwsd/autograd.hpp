#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "distillwsd/tensor.hpp"

namespace distillwsd {

/// Named trainable tensor. `grad` always has the shape of `value`.
template <typename T>
struct Parameter {
  Parameter() = default;
  Parameter(std::string name_, Tensor<T> value_, bool frozen_ = false)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()), frozen(frozen_) {}

  void zero_grad() { grad = Tensor<T>(value.shape()); }

  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;
};

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the tape lives
/// and has not been reset.
template <typename T>
class Var {
 public:
  Var() = default;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  /// Gradient of the last backward() target w.r.t. this node; empty if none flowed.
  const Tensor<T>& grad() const;

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamically recorded reverse-mode tape. Nodes are appended in execution order, so
/// reverse insertion order is a valid reverse topological order.
template <typename T>
class Tape {
 public:
  /// Propagates the node's output gradient into its inputs' gradient buffers.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  /// Free leaf, e.g. an input we want gradients for in a test.
  Var<T> leaf(Tensor<T> value, bool requires_grad);
  /// Leaf bound to a parameter. Frozen parameters behave as constants.
  Var<T> parameter(Parameter<T>& param);

  /// Record an op output. `backward` is dropped when no input requires grad.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar loss. Gradients of parameter leaves are added into
  /// Parameter::grad. A tape can be swept once; reset() before recording again.
  void backward(const Var<T>& loss);
  void reset();

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor<T>& grad(std::size_t id) const;
  /// Mutable gradient buffer of a node, zero-allocated on first use.
  Tensor<T>& grad_buffer(std::size_t id);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  Var<T> push(Node node);
  void check_owner(const Var<T>& v) const;

  std::deque<Node> nodes_;
  bool consumed_ = false;
  Tensor<T> empty_grad_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
  return tape_->grad(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace distillwsd
